//! Sampling of the quantitative stability inequality
//! `lambda(V) - lambda_bar >= C dist(V, optima)^2`.
//!
//! Potentials at a prescribed `L^1` distance `delta` from an optimum `V*` are
//! built by lowering `V*` on its set by a total mass `delta / 2` and raising
//! it outside by the same mass. Both moves stay in `[0, 1]`, the mass is
//! unchanged and the distance is exactly `delta`.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{l1_values, GridDomain, Potential};
use crate::optimizer::OptimalSetRegistry;
use crate::rng::{substream, StreamRng};
use crate::spectral::{eigenpair_for_values, DEFAULT_EIGEN_TOL};

const MAX_DESCENT_STEPS: usize = 6;
const MAX_REJECTIONS: usize = 100;

/// `min` over registry entries of the `L^1` distance to `v`.
pub fn dist_to_registry(v: &Potential, registry: &OptimalSetRegistry) -> Result<f64> {
    Ok(nearest_entry(v.grid(), v.values(), registry)?.1)
}

/// Index and distance of the closest entry.
pub fn nearest_entry(grid: &GridDomain, v: &[f64], registry: &OptimalSetRegistry) -> Result<(usize, f64)> {
    if registry.is_empty() {
        return Err(Error::EmptyRegistry);
    }
    grid.ensure_same(registry.grid())?;
    let mut best = (0, f64::INFINITY);
    for (k, e) in registry.entries.iter().enumerate() {
        let d = l1_values(grid, v, e.potential.values());
        if d < best.1 {
            best = (k, d);
        }
    }
    Ok(best)
}

/// Cells that can give mass (value above 1/2) and receive mass (the rest),
/// ordered by proximity to the level: increasing and decreasing `u`.
struct ShellCandidates {
    removal: Vec<usize>,
    addition: Vec<usize>,
}

fn candidates(base: &[f64], u: &[f64]) -> ShellCandidates {
    let mut removal: Vec<usize> = (0..base.len()).filter(|&c| base[c] > 0.5).collect();
    let mut addition: Vec<usize> = (0..base.len()).filter(|&c| base[c] <= 0.5).collect();
    removal.sort_by(|&a, &b| u[a].total_cmp(&u[b]).then(a.cmp(&b)));
    addition.sort_by(|&a, &b| u[b].total_cmp(&u[a]).then(a.cmp(&b)));
    ShellCandidates { removal, addition }
}

fn check_delta(grid: &GridDomain, base: &[f64], delta: f64, c: &ShellCandidates) -> Result<()> {
    let v0 = grid.cell_area() * base.iter().sum::<f64>();
    let bound = 2.0 * v0.min(grid.measure() - v0);
    let infeasible = |reason: String| Error::ShellInfeasible { delta, reason };
    if !(delta > 0.0 && delta < bound) {
        return Err(infeasible(format!("delta must lie in (0, {bound})")));
    }
    let need = 0.5 * delta / grid.cell_area();
    let give: f64 = c.removal.iter().map(|&k| base[k]).sum();
    let take: f64 = c.addition.iter().map(|&k| 1.0 - base[k]).sum();
    if give < need * (1.0 - 1e-12) {
        return Err(infeasible(format!(
            "set can release only {} mass",
            give * grid.cell_area()
        )));
    }
    if take < need * (1.0 - 1e-12) {
        return Err(infeasible(format!(
            "complement can absorb only {} mass",
            take * grid.cell_area()
        )));
    }
    Ok(())
}

/// Moves `need` (in cell units) through `order` with capacities `cap`:
/// cells are drawn from a band of the first few candidates, whose size is
/// log-uniform between the smallest feasible band and the full list, and
/// receive either their full capacity or a random part of it.
fn random_moves(order: &[usize], cap: impl Fn(usize) -> f64, need: f64, rng: &mut StreamRng) -> Vec<(usize, f64)> {
    let mut acc = 0.0;
    let mut min_band = order.len();
    for (k, &c) in order.iter().enumerate() {
        acc += cap(c);
        if acc >= need {
            min_band = k + 1;
            break;
        }
    }
    let lo = (min_band as f64).ln();
    let hi = (order.len() as f64).ln();
    let band = if hi > lo {
        (rng.gen_range(lo..=hi).exp().round() as usize).clamp(min_band, order.len())
    } else {
        min_band
    };
    let mut pool: Vec<usize> = order[..band].to_vec();
    // Fisher-Yates
    for i in (1..pool.len()).rev() {
        let j = rng.gen_range(0..=i);
        pool.swap(i, j);
    }
    let mut moved = vec![0.0; pool.len()];
    let mut left = need;
    for (k, &c) in pool.iter().enumerate() {
        if left <= 0.0 {
            break;
        }
        let amount = if rng.gen_bool(0.5) {
            cap(c)
        } else {
            rng.gen::<f64>() * cap(c)
        };
        let amount = amount.min(left);
        moved[k] = amount;
        left -= amount;
    }
    // top up to reach the exact total
    for (k, &c) in pool.iter().enumerate() {
        if left <= 0.0 {
            break;
        }
        let extra = (cap(c) - moved[k]).min(left);
        moved[k] += extra;
        left -= extra;
    }
    pool.into_iter().zip(moved).filter(|p| p.1 > 0.0).collect()
}

fn shell_values(base: &[f64], c: &ShellCandidates, need: f64, rng: &mut StreamRng) -> Vec<f64> {
    let mut v = base.to_vec();
    for (k, a) in random_moves(&c.removal, |k| base[k], need, rng) {
        v[k] = (v[k] - a).max(0.0);
    }
    for (k, a) in random_moves(&c.addition, |k| 1.0 - base[k], need, rng) {
        v[k] = (v[k] + a).min(1.0);
    }
    v
}

fn delta_stream_name(base_index: usize, delta: f64) -> String {
    format!("stability/shell/{base_index}/{:016x}", delta.to_bits())
}

fn draw_on_shell(
    registry: &OptimalSetRegistry,
    base_index: usize,
    delta: f64,
    c: &ShellCandidates,
    rng: &mut StreamRng,
) -> Result<Potential> {
    let entry = &registry.entries[base_index];
    let grid = entry.potential.grid();
    let base = entry.potential.values();
    let need = 0.5 * delta / grid.cell_area();
    for _ in 0..MAX_REJECTIONS {
        let v = shell_values(base, c, need, rng);
        let (k, d) = nearest_entry(grid, &v, registry)?;
        if k == base_index || l1_values(grid, &v, base) <= d {
            return Potential::from_values(grid, v, entry.potential.target_mass());
        }
    }
    Err(Error::ShellInfeasible {
        delta,
        reason: format!("another optimum stayed closer in {MAX_REJECTIONS} draws"),
    })
}

/// `n` potentials at `L^1` distance exactly `delta` from entry `base_index`
/// for which that entry is the nearest optimum.
pub fn sample_shell(
    registry: &OptimalSetRegistry,
    base_index: usize,
    delta: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<Potential>> {
    let entry = registry
        .entries
        .get(base_index)
        .ok_or_else(|| Error::InvalidArgument(format!("no registry entry {base_index}")))?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let grid = entry.potential.grid();
    let base = entry.potential.values();
    let c = candidates(base, entry.eigen.u.values());
    check_delta(grid, base, delta, &c)?;
    let name = delta_stream_name(base_index, delta);
    (0..n)
        .map(|i| draw_on_shell(registry, base_index, delta, &c, &mut substream(seed, &name, i as u64)))
        .collect()
}

/// Shell point minimizing the linearization `-int u^2 V`: mass leaves the
/// set where `u` is smallest and enters the complement where `u` is largest.
fn linearized_shell_minimizer(base: &[f64], u: &[f64], need: f64) -> Vec<f64> {
    let c = candidates(base, u);
    let mut v = base.to_vec();
    let mut left = need;
    for &k in &c.removal {
        if left <= 0.0 {
            break;
        }
        let a = base[k].min(left);
        v[k] -= a;
        left -= a;
    }
    left = need;
    for &k in &c.addition {
        if left <= 0.0 {
            break;
        }
        let a = (1.0 - base[k]).min(left);
        v[k] += a;
        left -= a;
    }
    v
}

/// One sampled potential with its eigenvalue gap, before and after the
/// shell-constrained descent.
#[derive(Clone, Debug, PartialEq)]
pub struct ShellSample {
    pub delta: f64,
    pub sample_id: usize,
    pub base_index: usize,
    pub raw_lambda: f64,
    pub raw_gap: f64,
    pub raw_ratio: f64,
    pub lambda: f64,
    pub gap: f64,
    pub ratio: f64,
    pub descent_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeltaSummary {
    pub delta: f64,
    pub min_ratio: f64,
    pub raw_min_ratio: f64,
    pub median_ratio: f64,
    pub min_gap: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub samples: Vec<ShellSample>,
    /// Smallest ratio after descent.
    pub estimated_c: f64,
    /// Smallest ratio among the raw samples.
    pub raw_estimated_c: f64,
    pub per_delta: Vec<DeltaSummary>,
    /// Least-squares slope of `log(min gap)` against `log(delta)`.
    pub gap_exponent: Option<f64>,
    pub lambda_bar: f64,
    pub min_gap: f64,
    pub invalid_registry: bool,
    pub seed: u64,
}

impl StabilityReport {
    /// Fails when a sample undercuts the registry's eigenvalue.
    pub fn validate(&self) -> Result<()> {
        if self.invalid_registry {
            Err(Error::InvalidRegistry { gap: self.min_gap })
        } else {
            Ok(())
        }
    }

    /// `delta,sample_id,lambda,gap,ratio`
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "delta,sample_id,lambda,gap,ratio")?;
        for s in &self.samples {
            writeln!(w, "{},{},{},{},{}", s.delta, s.sample_id, s.lambda, s.gap, s.ratio)?;
        }
        Ok(())
    }

    /// `delta,min_ratio,median_ratio,n`
    pub fn write_summary_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "delta,min_ratio,median_ratio,n")?;
        for d in &self.per_delta {
            writeln!(w, "{},{},{},{}", d.delta, d.min_ratio, d.median_ratio, d.n)?;
        }
        Ok(())
    }
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

fn evaluate(
    grid: &Arc<GridDomain>,
    registry: &OptimalSetRegistry,
    delta: f64,
    sample_id: usize,
    local_descent: bool,
    seed: u64,
    cands: &[ShellCandidates],
) -> Result<ShellSample> {
    let base_index = sample_id % registry.len();
    let entry = &registry.entries[base_index];
    let name = delta_stream_name(base_index, delta);
    let mut rng = substream(seed, &name, sample_id as u64);
    let v = draw_on_shell(registry, base_index, delta, &cands[base_index], &mut rng)?;
    let e = eigenpair_for_values(grid, v.values(), DEFAULT_EIGEN_TOL, Some(entry.eigen.u.values()))?;
    let lbar = registry.lambda_bar;
    let d2 = delta * delta;
    let mut s = ShellSample {
        delta,
        sample_id,
        base_index,
        raw_lambda: e.lambda,
        raw_gap: e.lambda - lbar,
        raw_ratio: (e.lambda - lbar) / d2,
        lambda: e.lambda,
        gap: e.lambda - lbar,
        ratio: (e.lambda - lbar) / d2,
        descent_steps: 0,
    };
    if local_descent {
        let base = entry.potential.values();
        let need = 0.5 * delta / grid.cell_area();
        let mut u = e.u;
        let mut current = v.values().to_vec();
        for _ in 0..MAX_DESCENT_STEPS {
            let next = linearized_shell_minimizer(base, u.values(), need);
            if next == current || nearest_entry(grid, &next, registry)?.0 != base_index {
                break;
            }
            let en = eigenpair_for_values(grid, &next, DEFAULT_EIGEN_TOL, Some(u.values()))?;
            if en.lambda >= s.lambda {
                break;
            }
            s.lambda = en.lambda;
            s.gap = en.lambda - lbar;
            s.ratio = s.gap / d2;
            s.descent_steps += 1;
            current = next;
            u = en.u;
        }
    }
    Ok(s)
}

/// Samples `n_per_delta` shell potentials for every `delta`, spread over the
/// registry entries, and reports gap ratios per shell.
pub fn estimate_constant(
    grid: &Arc<GridDomain>,
    registry: &OptimalSetRegistry,
    deltas: &[f64],
    n_per_delta: usize,
    local_descent: bool,
    seed: u64,
) -> Result<StabilityReport> {
    if registry.is_empty() {
        return Err(Error::EmptyRegistry);
    }
    grid.ensure_same(registry.grid())?;
    if deltas.is_empty() || n_per_delta == 0 {
        return Err(Error::InvalidArgument("need at least one delta and one sample".into()));
    }
    if deltas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("deltas must be strictly increasing".into()));
    }
    let cands: Vec<ShellCandidates> = registry
        .entries
        .iter()
        .map(|e| candidates(e.potential.values(), e.eigen.u.values()))
        .collect();
    for (e, c) in registry.entries.iter().zip(&cands) {
        for &d in deltas {
            check_delta(grid, e.potential.values(), d, c)?;
        }
    }

    let mut samples = Vec::with_capacity(deltas.len() * n_per_delta);
    let mut per_delta = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let batch: Vec<ShellSample> = (0..n_per_delta)
            .into_par_iter()
            .map(|i| evaluate(grid, registry, delta, i, local_descent, seed, &cands))
            .collect::<Result<_>>()?;
        let mut ratios: Vec<f64> = batch.iter().map(|s| s.ratio).collect();
        ratios.sort_by(f64::total_cmp);
        let median_ratio = if ratios.len() % 2 == 1 {
            ratios[ratios.len() / 2]
        } else {
            0.5 * (ratios[ratios.len() / 2 - 1] + ratios[ratios.len() / 2])
        };
        per_delta.push(DeltaSummary {
            delta,
            min_ratio: ratios[0],
            raw_min_ratio: batch.iter().map(|s| s.raw_ratio).fold(f64::INFINITY, f64::min),
            median_ratio,
            min_gap: batch.iter().map(|s| s.gap).fold(f64::INFINITY, f64::min),
            n: batch.len(),
        });
        samples.extend(batch);
    }

    let estimated_c = per_delta.iter().map(|d| d.min_ratio).fold(f64::INFINITY, f64::min);
    let raw_estimated_c = per_delta.iter().map(|d| d.raw_min_ratio).fold(f64::INFINITY, f64::min);
    let min_gap = samples
        .iter()
        .map(|s| s.gap.min(s.raw_gap))
        .fold(f64::INFINITY, f64::min);
    let positive: Vec<&DeltaSummary> = per_delta.iter().filter(|d| d.min_gap > 0.0).collect();
    let gap_exponent = if positive.len() == per_delta.len() {
        let x: Vec<f64> = positive.iter().map(|d| d.delta.ln()).collect();
        let y: Vec<f64> = positive.iter().map(|d| d.min_gap.ln()).collect();
        fit_slope(&x, &y)
    } else {
        None
    };
    Ok(StabilityReport {
        samples,
        estimated_c,
        raw_estimated_c,
        per_delta,
        gap_exponent,
        lambda_bar: registry.lambda_bar,
        min_gap,
        invalid_registry: min_gap < -2.0 * DEFAULT_EIGEN_TOL,
        seed,
    })
}
