//! Superlevel-set thresholding and rearrangement diagnostics.
//!
//! Maximizing `V -> h^2 sum f V` over potentials with `0 <= V <= 1` and mass
//! `V0` is solved by filling the cells in decreasing order of `f`. Cells that
//! share the threshold value receive a common fractional fill so that the
//! mass is met exactly.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{l1_values, GridDomain, Potential, ScalarField};

/// Threshold `mu(f; V0)` together with the masses that bracket `V0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSetInfo {
    pub mu: f64,
    /// Measure of the cells strictly above the level.
    pub strict_mass: f64,
    /// Measure of the cells at or above the level.
    pub closed_mass: f64,
    /// Fill fraction applied to cells on the level.
    pub fraction_on_level: f64,
}

/// Level computation with the sorted order retained for projection.
pub(crate) struct Levels {
    pub order: Vec<usize>,
    pub strict_count: usize,
    pub closed_count: usize,
    pub fraction: f64,
    pub mu: f64,
}

impl Levels {
    pub fn info(&self, grid: &GridDomain) -> LevelSetInfo {
        let a = grid.cell_area();
        LevelSetInfo {
            mu: self.mu,
            strict_mass: a * self.strict_count as f64,
            closed_mass: a * self.closed_count as f64,
            fraction_on_level: self.fraction,
        }
    }

    pub fn projection(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for &c in &self.order[..self.strict_count] {
            v[c] = 1.0;
        }
        for &c in &self.order[self.strict_count..self.closed_count] {
            v[c] = self.fraction;
        }
        v
    }
}

fn check_mass(grid: &GridDomain, v0: f64) -> Result<()> {
    if v0 > 0.0 && v0 < grid.measure() {
        Ok(())
    } else {
        Err(Error::MassOutOfRange {
            mass: v0,
            domain_measure: grid.measure(),
        })
    }
}

/// Descending order of `f`, ties broken by cell index.
pub(crate) fn descending_order(f: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..f.len()).collect();
    order.sort_by(|&a, &b| f[b].total_cmp(&f[a]).then(a.cmp(&b)));
    order
}

/// Values within `tie_tol` of a group's largest value share the level.
pub(crate) fn levels(grid: &GridDomain, f: &[f64], v0: f64, tie_tol: f64) -> Result<Levels> {
    check_mass(grid, v0)?;
    let n = f.len();
    let order = descending_order(f);
    let m = v0 / grid.cell_area();
    let slack = 1e-12 * n as f64;
    let mut start = 0;
    while start < n {
        let head = f[order[start]];
        let mut end = start + 1;
        while end < n && f[order[end]] >= head - tie_tol {
            end += 1;
        }
        if end as f64 > m + slack {
            let fraction = if m - start as f64 <= slack {
                0.0
            } else if end as f64 - m <= slack {
                1.0
            } else {
                ((m - start as f64) / (end - start) as f64).clamp(0.0, 1.0)
            };
            let mu = f[order[end - 1]];
            return Ok(Levels {
                order,
                strict_count: start,
                closed_count: end,
                fraction,
                mu,
            });
        }
        start = end;
    }
    Err(Error::MassOutOfRange {
        mass: v0,
        domain_measure: grid.measure(),
    })
}

/// Largest level whose superlevel set can carry the mass `V0` with the
/// strict superlevel set carrying at most `V0`.
pub fn level_threshold(f: &ScalarField, v0: f64) -> Result<LevelSetInfo> {
    Ok(levels(f.grid(), f.values(), v0, 0.0)?.info(f.grid()))
}

/// The maximizer of `h^2 sum f V` over admissible potentials of mass `V0`.
pub fn bathtub_projection(f: &ScalarField, v0: f64) -> Result<Potential> {
    bathtub_projection_with_ties(f, v0, 0.0)
}

/// As [`bathtub_projection`], treating values within `tie_tol` of the level
/// as tied.
pub fn bathtub_projection_with_ties(f: &ScalarField, v0: f64, tie_tol: f64) -> Result<Potential> {
    let grid = f.grid();
    let lv = levels(grid, f.values(), v0, tie_tol)?;
    Potential::from_values(grid, lv.projection(f.len()), v0)
}

/// Discrete decreasing rearrangement: sorted values and the measure carried
/// up to each rank.
#[derive(Clone, Debug)]
pub struct RearrangementProfile {
    pub sorted_values: Vec<f64>,
    /// `(k + 1) h^2` for rank `k`.
    pub cumulative_measure: Vec<f64>,
    pub cell_area: f64,
}

impl RearrangementProfile {
    /// Distribution function `|{f >= t}|`.
    pub fn distribution(&self, t: f64) -> f64 {
        self.cell_area * self.sorted_values.partition_point(|&v| v >= t) as f64
    }

    pub fn integral(&self) -> f64 {
        self.cell_area * self.sorted_values.iter().sum::<f64>()
    }

    /// Value of the radially symmetric rearrangement at radius `r`, i.e. the
    /// sorted value at measure `pi r^2`.
    pub fn radial_value(&self, r: f64) -> f64 {
        let k = ((PI * r * r / self.cell_area).floor() as usize).min(self.sorted_values.len() - 1);
        self.sorted_values[k]
    }

    /// `|d f* / dr|` at the radius enclosing `mass`, estimated from the value
    /// drop over `window` ranks centered there.
    pub fn radial_slope(&self, mass: f64, window: usize) -> f64 {
        let n = self.sorted_values.len();
        let k = (mass / self.cell_area).round() as usize;
        let half = (window / 2).max(1);
        let lo = k.saturating_sub(half);
        let hi = (k + half).min(n - 1);
        if hi <= lo {
            return 0.0;
        }
        let drop = self.sorted_values[lo] - self.sorted_values[hi];
        let span = (hi - lo) as f64 * self.cell_area;
        let r0 = (mass / PI).sqrt();
        2.0 * PI * r0 * drop / span
    }
}

pub fn decreasing_rearrangement(f: &ScalarField) -> RearrangementProfile {
    let mut sorted_values = f.values().to_vec();
    sorted_values.sort_by(|a, b| b.total_cmp(a));
    let a = f.grid().cell_area();
    let cumulative_measure = (1..=sorted_values.len()).map(|k| k as f64 * a).collect();
    RearrangementProfile {
        sorted_values,
        cumulative_measure,
        cell_area: a,
    }
}

fn axis_slope(grid: &GridDomain, f: &[f64], cell: usize, plus: usize, minus: usize) -> f64 {
    let ns = grid.neighbors(cell);
    let h = grid.h();
    match (ns[plus], ns[minus]) {
        (Some(p), Some(m)) => (f[p] - f[m]) / (2.0 * h),
        (Some(p), None) => (f[p] - f[cell]) / h,
        (None, Some(m)) => (f[cell] - f[m]) / h,
        (None, None) => 0.0,
    }
}

/// Estimate of `inf |grad f|` on the level line `{f = mu}`.
///
/// For every pair of 4-neighbors with one cell at or above `mu` and the
/// other below, the gradient at the pair midpoint is estimated from the
/// difference across the pair and the mean transverse central difference.
/// Returns 0 when no such pair exists.
pub fn boundary_steepness(f: &ScalarField, info: &LevelSetInfo) -> f64 {
    let grid = f.grid();
    let v = f.values();
    let h = grid.h();
    let mut best = f64::INFINITY;
    for a in 0..grid.len() {
        if v[a] < info.mu {
            continue;
        }
        for (dir, nb) in grid.neighbors(a).iter().enumerate() {
            let Some(b) = *nb else { continue };
            if v[b] >= info.mu {
                continue;
            }
            let along = (v[a] - v[b]) / h;
            let (p, m) = if dir < 2 { (2, 3) } else { (0, 1) };
            let across = 0.5 * (axis_slope(grid, v, a, p, m) + axis_slope(grid, v, b, p, m));
            best = best.min((along * along + across * across).sqrt());
        }
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

/// Deficit of `V` against the bathtub maximizer and its `L^1` distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BathtubDeficit {
    pub gap: f64,
    pub distance: f64,
}

impl BathtubDeficit {
    pub fn ratio(&self) -> f64 {
        self.gap / (self.distance * self.distance)
    }
}

pub fn bathtub_deficit(f: &ScalarField, v: &Potential, v0: f64) -> Result<BathtubDeficit> {
    let grid = f.grid();
    grid.ensure_same(v.grid())?;
    let proj = levels(grid, f.values(), v0, 0.0)?.projection(f.len());
    let a = grid.cell_area();
    let gap = a * f
        .values()
        .iter()
        .zip(&proj)
        .zip(v.values())
        .map(|((fi, p), w)| fi * (p - w))
        .sum::<f64>();
    let distance = l1_values(grid, &proj, v.values());
    Ok(BathtubDeficit { gap, distance })
}

/// `gap / dist^2` where `gap = h^2 sum f (V_f - V)` and `dist = |V - V_f|_1`.
pub fn bathtub_stability_ratio(f: &ScalarField, v: &Potential, v0: f64) -> Result<f64> {
    let d = bathtub_deficit(f, v, v0)?;
    if d.distance <= 1e-14 * f.grid().measure() {
        return Err(Error::DegenerateDistance);
    }
    Ok(d.ratio())
}

/// Staircase perimeter of the set `{V >= 1/2}`: `h` times the number of
/// lattice edges separating set from non-set cells, edges to the exterior
/// included.
pub fn discrete_perimeter(indicator: &Potential) -> f64 {
    perimeter_of(indicator.grid(), &indicator.rounded())
}

pub(crate) fn perimeter_of(grid: &GridDomain, set: &[f64]) -> f64 {
    let mut edges = 0usize;
    for c in 0..grid.len() {
        let inside = set[c] >= 0.5;
        for nb in grid.neighbors(c) {
            match nb {
                Some(n) if n > c => edges += usize::from(inside != (set[n] >= 0.5)),
                Some(_) => {}
                None => edges += usize::from(inside),
            }
        }
    }
    edges as f64 * grid.h()
}

/// Quantities entering the comparison between the normal derivative of the
/// radial rearrangement on the ball of mass `V0` and the steepness of `f` on
/// its level line.
#[derive(Clone, Debug)]
pub struct SchwarzBound {
    /// `|d f*/dr|` on the ball of mass `V0`.
    pub radial_slope: f64,
    /// `omega(f; V0)` estimate.
    pub steepness: f64,
    /// Perimeter of the ball of mass `V0`.
    pub ball_perimeter: f64,
    /// Staircase perimeter of the superlevel set.
    pub level_perimeter: f64,
}

impl SchwarzBound {
    /// `omega * Per(B0) / Per(level set)`.
    pub fn lower_bound(&self) -> f64 {
        self.steepness * self.ball_perimeter / self.level_perimeter
    }

    pub fn holds(&self) -> bool {
        self.radial_slope >= self.lower_bound()
    }
}

pub fn schwarz_bound(f: &ScalarField, v0: f64) -> Result<SchwarzBound> {
    let grid: &Arc<GridDomain> = f.grid();
    let info = level_threshold(f, v0)?;
    let steepness = boundary_steepness(f, &info);
    let proj = bathtub_projection(f, v0)?;
    let level_perimeter = discrete_perimeter(&proj);
    let profile = decreasing_rearrangement(f);
    // several cell layers, to average out lattice-point counting noise
    let window = ((8.0 * level_perimeter / grid.h()).round() as usize)
        .max(4)
        .min(f.len() / 4);
    let radial_slope = profile.radial_slope(v0, window);
    Ok(SchwarzBound {
        radial_slope,
        steepness,
        ball_perimeter: 2.0 * (PI * v0).sqrt(),
        level_perimeter,
    })
}
