//! Minimization of `lambda(V)` over admissible potentials.
//!
//! Since `d lambda / dV = -u^2`, the bathtub projection of the current
//! eigenfunction is the exact minimizer of the linearized problem over the
//! admissible class. Iterating `V <- bathtub(u_V)` therefore decreases
//! `lambda` at every step (the old eigenfunction is a trial function for the
//! new Rayleigh quotient) and stops at sets of the form `{u > mu}`.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::bathtub::{
    bathtub_projection, bathtub_projection_with_ties, boundary_steepness, discrete_perimeter, level_threshold,
};
use crate::error::{Error, Result};
use crate::grid::{l1_distance, l1_values, mass_tolerance, GridDomain, Potential, ScalarField};
use crate::rng::{substream, StreamRng};
use crate::spectral::{dirichlet_ground_eigenvalue, principal_eigenpair_from, EigenPair, DEFAULT_EIGEN_TOL};

mod shape;

pub use shape::{shape_derivative_check, shape_derivative_check_base, DeformationField, ShapeBase, ShapeCheckReport};

pub const DEFAULT_MAX_ITER: usize = 500;

/// Values of the eigenfunction within this fraction of its maximum of the
/// threshold are treated as tied.
pub const DEFAULT_TIE_REL: f64 = 1e-9;

/// `(lambda, fixed-point residual)` per iteration.
#[derive(Clone, Debug, Default)]
pub struct DescentHistory {
    pub iterates: Vec<(f64, f64)>,
    pub converged: bool,
    pub iterations: usize,
}

impl DescentHistory {
    /// True when no eigenvalue exceeds its predecessor by more than `slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.iterates.windows(2).all(|w| w[1].0 <= w[0].0 + slack)
    }

    pub fn final_lambda(&self) -> Option<f64> {
        self.iterates.last().map(|p| p.0)
    }
}

/// Settings of the fixed-point iteration.
#[derive(Clone, Debug)]
pub struct DescentOptions {
    pub max_iter: usize,
    /// Stop when consecutive iterates are this close in `L^1`. Defaults to one
    /// cell area.
    pub fp_tol: Option<f64>,
    pub eigen_tol: f64,
    pub tie_rel: f64,
}

impl Default for DescentOptions {
    fn default() -> Self {
        DescentOptions {
            max_iter: DEFAULT_MAX_ITER,
            fp_tol: None,
            eigen_tol: DEFAULT_EIGEN_TOL,
            tie_rel: DEFAULT_TIE_REL,
        }
    }
}

fn check_target(grid: &GridDomain, v: &Potential, v0: f64) -> Result<()> {
    if (v.target_mass() - v0).abs() > mass_tolerance(grid) {
        return Err(Error::NotAdmissible(format!(
            "initial potential has mass {} but V0 = {v0}",
            v.target_mass()
        )));
    }
    Ok(())
}

/// Image of `V` under the fixed-point map, from its eigenfunction `u`.
pub fn fixed_point_map(u: &ScalarField, v0: f64, tie_rel: f64) -> Result<Potential> {
    bathtub_projection_with_ties(u, v0, tie_rel * u.max().abs())
}

/// Runs `V <- bathtub(u_V, V0)` from `init` until consecutive iterates are
/// within `fp_tol` in `L^1` and returns the last potential with its
/// eigenpair.
pub fn optimize_potential(
    grid: &Arc<GridDomain>,
    v0: f64,
    init: &Potential,
    max_iter: usize,
    fp_tol: f64,
) -> Result<(Potential, EigenPair, DescentHistory)> {
    optimize_potential_with(
        grid,
        v0,
        init,
        &DescentOptions {
            max_iter,
            fp_tol: Some(fp_tol),
            ..DescentOptions::default()
        },
    )
}

pub fn optimize_potential_with(
    grid: &Arc<GridDomain>,
    v0: f64,
    init: &Potential,
    opts: &DescentOptions,
) -> Result<(Potential, EigenPair, DescentHistory)> {
    grid.ensure_same(init.grid())?;
    check_target(grid, init, v0)?;
    let fp_tol = opts.fp_tol.unwrap_or(grid.cell_area());
    let mut history = DescentHistory::default();
    let mut v = init.clone();
    let mut guess: Option<ScalarField> = None;
    for k in 1..=opts.max_iter {
        let e = principal_eigenpair_from(grid, &v, opts.eigen_tol, guess.as_ref())?;
        let next = fixed_point_map(&e.u, v0, opts.tie_rel)?;
        let residual = l1_distance(next.field(), v.field())?;
        history.iterates.push((e.lambda, residual));
        history.iterations = k;
        if residual <= fp_tol {
            history.converged = true;
            return Ok((v, e, history));
        }
        guess = Some(e.u);
        v = next;
    }
    Err(Error::OptimizerStalled {
        history: Box::new(history),
    })
}

/// Random admissible start: the bathtub projection of a union of one to four
/// random rectangles plus a small smooth random perturbation.
pub fn random_initialization(grid: &Arc<GridDomain>, v0: f64, rng: &mut StreamRng) -> Result<Potential> {
    let (ox, oy) = grid.origin();
    let (wx, wy) = (grid.nx() as f64 * grid.h(), grid.ny() as f64 * grid.h());
    let k = rng.gen_range(1..=4);
    let rects: Vec<[f64; 4]> = (0..k)
        .map(|_| {
            let cx = ox + rng.gen::<f64>() * wx;
            let cy = oy + rng.gen::<f64>() * wy;
            let hx = rng.gen_range(0.05..0.35) * wx;
            let hy = rng.gen_range(0.05..0.35) * wy;
            [cx - hx, cx + hx, cy - hy, cy + hy]
        })
        .collect();
    let bumps: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                ox + rng.gen::<f64>() * wx,
                oy + rng.gen::<f64>() * wy,
                rng.gen_range(0.1..0.4) * wx.max(wy),
                rng.gen_range(0.5..1.0),
            ]
        })
        .collect();
    let f = ScalarField::from_fn(grid, |x, y| {
        let inside = rects
            .iter()
            .filter(|r| x >= r[0] && x <= r[1] && y >= r[2] && y <= r[3])
            .count() as f64;
        let smooth: f64 = bumps
            .iter()
            .map(|b| b[3] * (-((x - b[0]).powi(2) + (y - b[1]).powi(2)) / (b[2] * b[2])).exp())
            .sum();
        inside.min(1.0) + 0.1 * smooth
    })?;
    bathtub_projection(&f, v0)
}

/// Cell pairs `(inside, outside)` straddling the boundary of `{V >= 1/2}`.
pub(crate) fn interface_pairs(grid: &GridDomain, v: &[f64]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for a in 0..grid.len() {
        if v[a] < 0.5 {
            continue;
        }
        for b in grid.neighbors(a).into_iter().flatten() {
            if v[b] < 0.5 {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

/// Volume multiplier estimated from `u^2` on the interface, with the spread
/// of `u^2` along it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Multiplier {
    pub value: f64,
    pub spread: f64,
    pub pairs: usize,
}

/// `-mean(u^2)` over interface midpoints of `{V >= 1/2}`.
pub fn lagrange_multiplier(potential: &Potential, u: &ScalarField) -> Result<Multiplier> {
    let grid = potential.grid();
    grid.ensure_same(u.grid())?;
    let uv = u.values();
    let pairs = interface_pairs(grid, potential.values());
    if pairs.is_empty() {
        return Err(Error::EmptyBoundary);
    }
    let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for &(a, b) in &pairs {
        let m = 0.5 * (uv[a] + uv[b]);
        let s = m * m;
        lo = lo.min(s);
        hi = hi.max(s);
        sum += s;
    }
    Ok(Multiplier {
        value: -sum / pairs.len() as f64,
        spread: hi - lo,
        pairs: pairs.len(),
    })
}

/// `min(min u on the inner interface cells, steepness of u on its level
/// line)`; 0 when the set has no interface.
pub fn hopf_constant(potential: &Potential, u: &ScalarField) -> Result<f64> {
    let grid = potential.grid();
    grid.ensure_same(u.grid())?;
    let pairs = interface_pairs(grid, potential.values());
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let min_u = pairs.iter().map(|&(a, _)| u.values()[a]).fold(f64::INFINITY, f64::min);
    let info = level_threshold(u, potential.target_mass())?;
    Ok(min_u.min(boundary_steepness(u, &info)))
}

/// One optimum with its first-order diagnostics.
#[derive(Clone, Debug)]
pub struct RegistryEntry {
    pub potential: Potential,
    pub eigen: EigenPair,
    pub lambda: f64,
    /// Level of the eigenfunction at the volume `V0`.
    pub mu: f64,
    pub multiplier: f64,
    /// Spread of `u^2` along the interface.
    pub multiplier_spread: f64,
    pub hopf: f64,
    pub perimeter: f64,
    pub mass: f64,
    pub fixed_point_residual: f64,
    /// Index of the start that produced the entry.
    pub start: usize,
    pub iterations: usize,
}

impl RegistryEntry {
    pub fn analyze(potential: Potential, eigen: EigenPair, fixed_point_residual: f64) -> Result<Self> {
        let v0 = potential.target_mass();
        let mu = level_threshold(&eigen.u, v0)?.mu;
        let m = lagrange_multiplier(&potential, &eigen.u)?;
        let hopf = hopf_constant(&potential, &eigen.u)?;
        let perimeter = discrete_perimeter(&potential);
        Ok(RegistryEntry {
            lambda: eigen.lambda,
            mu,
            multiplier: m.value,
            multiplier_spread: m.spread,
            hopf,
            perimeter,
            mass: potential.mass(),
            fixed_point_residual,
            start: 0,
            iterations: 0,
            potential,
            eigen,
        })
    }
}

/// Distinct near-minimal fixed points found by the multistart search.
#[derive(Clone, Debug)]
pub struct OptimalSetRegistry {
    pub entries: Vec<RegistryEntry>,
    pub lambda_bar: f64,
    pub dedupe_radius: f64,
    pub cluster_tol: f64,
    pub target_mass: f64,
    pub failed_starts: usize,
    pub histories: Vec<DescentHistory>,
}

impl OptimalSetRegistry {
    /// Keeps candidates with `lambda <= min + cluster_tol`, then drops any
    /// candidate within `beta` of a lower one.
    pub fn from_candidates(mut candidates: Vec<RegistryEntry>, cluster_tol: f64, beta: f64) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::EmptyRegistry);
        }
        let grid = candidates[0].potential.grid().clone();
        for c in &candidates {
            grid.ensure_same(c.potential.grid())?;
        }
        candidates.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.start.cmp(&b.start)));
        let lambda_bar = candidates[0].lambda;
        let target_mass = candidates[0].potential.target_mass();
        let mut entries: Vec<RegistryEntry> = Vec::new();
        for c in candidates {
            if c.lambda > lambda_bar + cluster_tol {
                break;
            }
            let close = entries
                .iter()
                .any(|e| l1_values(&grid, e.potential.values(), c.potential.values()) < beta);
            if !close {
                entries.push(c);
            }
        }
        Ok(OptimalSetRegistry {
            entries,
            lambda_bar,
            dedupe_radius: beta,
            cluster_tol,
            target_mass,
            failed_starts: 0,
            histories: Vec::new(),
        })
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        self.entries[0].potential.grid()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `entry_id,lambda,mu,multiplier,hopf,perimeter,mass`
    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "entry_id,lambda,mu,multiplier,hopf,perimeter,mass")?;
        for (k, e) in self.entries.iter().enumerate() {
            writeln!(
                w,
                "{k},{},{},{},{},{},{}",
                e.lambda, e.mu, e.multiplier, e.hopf, e.perimeter, e.mass
            )?;
        }
        Ok(())
    }
}

/// Settings of the multistart search.
#[derive(Clone, Debug)]
pub struct MultistartOptions {
    pub n_starts: usize,
    pub seed: u64,
    /// Defaults to `1e-6 * lambda_D`.
    pub cluster_tol: Option<f64>,
    /// Defaults to `0.05 * |Omega|`.
    pub beta: Option<f64>,
    pub descent: DescentOptions,
}

impl Default for MultistartOptions {
    fn default() -> Self {
        MultistartOptions {
            n_starts: 8,
            seed: 0,
            cluster_tol: None,
            beta: None,
            descent: DescentOptions::default(),
        }
    }
}

pub fn enumerate_optima(
    grid: &Arc<GridDomain>,
    v0: f64,
    n_starts: usize,
    seed: u64,
    cluster_tol: f64,
    beta: f64,
) -> Result<OptimalSetRegistry> {
    enumerate_optima_with(
        grid,
        v0,
        &MultistartOptions {
            n_starts,
            seed,
            cluster_tol: Some(cluster_tol),
            beta: Some(beta),
            ..MultistartOptions::default()
        },
    )
}

/// Runs the fixed-point iteration from `n_starts` random starts (in parallel
/// on the current rayon pool) and collects the distinct minimizers.
pub fn enumerate_optima_with(grid: &Arc<GridDomain>, v0: f64, opts: &MultistartOptions) -> Result<OptimalSetRegistry> {
    if opts.n_starts == 0 {
        return Err(Error::InvalidArgument("n_starts must be at least 1".into()));
    }
    let ld = dirichlet_ground_eigenvalue(grid)?;
    let cluster_tol = opts.cluster_tol.unwrap_or(1e-6 * ld.abs());
    let beta = opts.beta.unwrap_or(0.05 * grid.measure());
    let runs: Vec<Result<(RegistryEntry, DescentHistory)>> = (0..opts.n_starts)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(opts.seed, "optimizer/start", i as u64);
            let init = random_initialization(grid, v0, &mut rng)?;
            let (v, e, hist) = optimize_potential_with(grid, v0, &init, &opts.descent)?;
            let residual = hist.iterates.last().map_or(0.0, |p| p.1);
            let mut entry = RegistryEntry::analyze(v, e, residual)?;
            entry.start = i;
            entry.iterations = hist.iterations;
            Ok((entry, hist))
        })
        .collect();
    let mut candidates = Vec::new();
    let mut histories = Vec::new();
    let mut failed = 0;
    for r in runs {
        match r {
            Ok((entry, hist)) => {
                candidates.push(entry);
                histories.push(hist);
            }
            Err(Error::OptimizerStalled { history }) => {
                failed += 1;
                histories.push(*history);
            }
            Err(_) => failed += 1,
        }
    }
    if candidates.is_empty() {
        return Err(Error::AllRunsFailed { starts: opts.n_starts });
    }
    let mut reg = OptimalSetRegistry::from_candidates(candidates, cluster_tol, beta)?;
    reg.failed_starts = failed;
    reg.histories = histories;
    Ok(reg)
}
