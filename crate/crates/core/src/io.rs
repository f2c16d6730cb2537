//! Field dumps: a 16-bit PGM image over the bounding lattice for viewing and
//! a CSV sidecar `cell_i,cell_j,value` that round-trips exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{GridDomain, ScalarField};

/// Plain (`P2`) PGM with maxval 65535, top row at the largest `y`. Interior
/// values are mapped linearly onto `1..=65535`; exterior points are 0.
pub fn write_pgm(field: &ScalarField, mut w: impl Write) -> Result<()> {
    let grid = field.grid();
    let (nx, ny) = (grid.nx(), grid.ny());
    let (lo, hi) = (field.min(), field.max());
    let scale = |v: f64| -> u32 {
        if hi > lo {
            1 + ((v - lo) / (hi - lo) * 65534.0).round() as u32
        } else {
            65535
        }
    };
    writeln!(w, "P2")?;
    writeln!(w, "{} {}", nx + 1, ny + 1)?;
    writeln!(w, "65535")?;
    for j in (0..=ny).rev() {
        let row: Vec<String> = (0..=nx)
            .map(|i| grid.index_of(i, j).map_or(0, |c| scale(field.values()[c])).to_string())
            .collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

/// `cell_i,cell_j,value` in storage order; values use shortest round-trip
/// formatting.
pub fn write_field_csv(field: &ScalarField, mut w: impl Write) -> Result<()> {
    writeln!(w, "cell_i,cell_j,value")?;
    for (c, &(i, j)) in field.grid().interior().iter().enumerate() {
        writeln!(w, "{i},{j},{}", field.values()[c])?;
    }
    Ok(())
}

/// Reads a sidecar written by [`write_field_csv`] back onto `grid`.
pub fn read_field_csv(grid: &Arc<GridDomain>, r: impl Read) -> Result<ScalarField> {
    let bad = |line: usize, what: &str| Error::InvalidField(format!("line {line}: {what}"));
    let mut values = vec![f64::NAN; grid.len()];
    let mut seen = 0usize;
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if n == 0 {
            if line.trim() != "cell_i,cell_j,value" {
                return Err(bad(1, "unexpected header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (Some(i), Some(j), Some(v), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad(n + 1, "expected three columns"));
        };
        let i: usize = i.trim().parse().map_err(|_| bad(n + 1, "bad cell_i"))?;
        let j: usize = j.trim().parse().map_err(|_| bad(n + 1, "bad cell_j"))?;
        let v: f64 = v.trim().parse().map_err(|_| bad(n + 1, "bad value"))?;
        let c = grid.index_of(i, j).ok_or_else(|| bad(n + 1, "cell is not interior"))?;
        if !values[c].is_nan() {
            return Err(bad(n + 1, "duplicate cell"));
        }
        values[c] = v;
        seen += 1;
    }
    if seen != grid.len() {
        return Err(Error::LengthMismatch(format!(
            "{seen} cells read, grid has {}",
            grid.len()
        )));
    }
    ScalarField::new(grid, values)
}

/// Writes `<stem>.pgm` and `<stem>.csv` under `dir` and returns both paths.
pub fn dump_field(field: &ScalarField, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let pgm = dir.join(format!("{stem}.pgm"));
    let csv = dir.join(format!("{stem}.csv"));
    let mut w = BufWriter::new(File::create(&pgm)?);
    write_pgm(field, &mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(&csv)?);
    write_field_csv(field, &mut w)?;
    w.flush()?;
    Ok(vec![pgm, csv])
}
