//! Named random streams derived from one seed.
//!
//! Every consumer asks for a stream by name, so the numbers it draws do not
//! depend on which other consumers ran first or on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// 64-bit key for `(seed, name)`.
pub fn stream_key(seed: u64, name: &str) -> u64 {
    splitmix(seed ^ splitmix(fnv1a(name.as_bytes())))
}

/// Generator for the stream `name` under `seed`.
pub fn stream(seed: u64, name: &str) -> StreamRng {
    let key = stream_key(seed, name);
    let mut bytes = [0u8; 32];
    let mut z = key;
    for chunk in bytes.chunks_mut(8) {
        z = splitmix(z);
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// Generator for item `index` of the stream `name`.
pub fn substream(seed: u64, name: &str, index: u64) -> StreamRng {
    stream(seed, &format!("{name}#{index}"))
}
