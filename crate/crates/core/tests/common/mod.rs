#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use spectral_turnpike::{GridDomain, Potential};

/// Random point of the admissible class: uniform values rescaled toward 0
/// or 1 until the mass matches.
pub fn random_admissible(grid: &Arc<GridDomain>, v0: f64, rng: &mut impl Rng) -> Potential {
    let n = grid.len() as f64;
    let m = v0 / grid.cell_area();
    let w: Vec<f64> = (0..grid.len())
        .map(|_| rng.gen::<f64>().powi(rng.gen_range(1..4)))
        .collect();
    let s: f64 = w.iter().sum();
    let vals: Vec<f64> = if s >= m {
        w.iter().map(|x| x * m / s).collect()
    } else {
        let c = (n - m) / (n - s);
        w.iter().map(|x| 1.0 - (1.0 - x) * c).collect()
    };
    Potential::from_values(grid, vals.iter().map(|x| x.clamp(0.0, 1.0)).collect(), v0).unwrap()
}

pub fn gaussian(center: (f64, f64), width: f64) -> impl Fn(f64, f64) -> f64 {
    move |x, y| (-((x - center.0).powi(2) + (y - center.1).powi(2)) / (2.0 * width * width)).exp()
}
