//! Bilinear heat control `y' = Delta_h y + V(t) y` with `V(t)` admissible at
//! every time, maximizing the final mass `h^2 sum y(T)`.
//!
//! Time stepping is implicit Euler on a uniform grid of `nt` steps with the
//! control constant on each step:
//!
//! ```text
//! M_k y_{k+1} = y_k,   M_k = I + dt (-Delta_h - V_k),   k = 0..nt-1.
//! ```
//!
//! Each `M_k` is solved by the splitting `P x = b + dt V_k x` with `P` the
//! Cholesky-factored `I - dt Delta_h`. Starting from `x = 0` every iterate is
//! a sum of nonnegative terms, so states and adjoints stay nonnegative
//! exactly, and the error contracts by `dt / (1 + dt lambda_D)` per sweep.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::bathtub::bathtub_projection;
use crate::error::{Error, Result};
use crate::grid::{dot, GridDomain, Potential, ScalarField};
use crate::linalg::BandedCholesky;
use crate::optimizer::OptimalSetRegistry;
use crate::spectral::{eigenpair_for_values, DEFAULT_EIGEN_TOL};
use crate::stability::{fit_slope, nearest_entry};

const SPLIT_MAX_SWEEPS: usize = 400;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;

/// Piecewise-constant admissible control on `[0, T]`.
#[derive(Clone, Debug)]
pub struct ControlTrajectory {
    grid: Arc<GridDomain>,
    horizon: f64,
    slices: Vec<Potential>,
}

impl ControlTrajectory {
    pub fn new(grid: &Arc<GridDomain>, horizon: f64, slices: Vec<Potential>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if slices.is_empty() {
            return Err(Error::InvalidArgument("a trajectory needs at least one slice".into()));
        }
        for s in &slices {
            grid.ensure_same(s.grid())?;
        }
        Ok(ControlTrajectory {
            grid: grid.clone(),
            horizon,
            slices,
        })
    }

    /// `V(t) = v` for all `t`.
    pub fn constant(grid: &Arc<GridDomain>, horizon: f64, nt: usize, v: &Potential) -> Result<Self> {
        Self::new(grid, horizon, vec![v.clone(); nt])
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn nt(&self) -> usize {
        self.slices.len()
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.slices.len() as f64
    }

    pub fn slices(&self) -> &[Potential] {
        &self.slices
    }

    fn slice_values(&self) -> Vec<&[f64]> {
        self.slices.iter().map(|s| s.values()).collect()
    }
}

/// Solver for `(I + dt(-Delta_h - V)) x = b` with `0 <= V`.
pub struct StepSolver {
    dt: f64,
    factor: BandedCholesky,
}

impl StepSolver {
    pub fn new(grid: &GridDomain, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        let factor = BandedCholesky::factor(grid, dt, &vec![1.0; grid.len()])?;
        Ok(StepSolver { dt, factor })
    }

    pub fn solve(&self, v: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        let n = rhs.len();
        let mut x = vec![0.0; n];
        let mut next = vec![0.0; n];
        for _ in 0..SPLIT_MAX_SWEEPS {
            for i in 0..n {
                next[i] = rhs[i] + self.dt * v[i] * x[i];
            }
            self.factor.solve_in_place(&mut next);
            let scale = next.iter().fold(0.0f64, |m, a| m.max(a.abs()));
            let change = next.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            std::mem::swap(&mut x, &mut next);
            if change <= 1e-16 * scale {
                return Ok(x);
            }
        }
        Err(Error::LinearSolveFailure(format!(
            "splitting iteration did not settle in {SPLIT_MAX_SWEEPS} sweeps (dt = {})",
            self.dt
        )))
    }
}

fn check_initial(y0: &[f64]) -> Result<()> {
    if y0.iter().any(|&a| a < 0.0) {
        return Err(Error::InvalidField("initial state must be nonnegative".into()));
    }
    if y0.iter().all(|&a| a == 0.0) {
        return Err(Error::ZeroField);
    }
    Ok(())
}

/// States `y_0 ..= y_nt` for raw slice values (no admissibility check).
pub fn forward_states(grid: &GridDomain, dt: f64, slices: &[&[f64]], y0: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_initial(y0)?;
    let solver = StepSolver::new(grid, dt)?;
    forward_with(&solver, slices, y0)
}

fn forward_with(solver: &StepSolver, slices: &[&[f64]], y0: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut states = Vec::with_capacity(slices.len() + 1);
    states.push(y0.to_vec());
    for v in slices {
        let next = solver.solve(v, states.last().unwrap())?;
        states.push(next);
    }
    Ok(states)
}

fn adjoint_with(solver: &StepSolver, slices: &[&[f64]], terminal: &[f64]) -> Result<Vec<Vec<f64>>> {
    let nt = slices.len();
    let mut adj = vec![Vec::new(); nt + 1];
    adj[nt] = terminal.to_vec();
    for k in (0..nt).rev() {
        adj[k] = solver.solve(slices[k], &adj[k + 1])?;
    }
    Ok(adj)
}

fn refs(s: &[Vec<f64>]) -> Vec<&[f64]> {
    s.iter().map(|v| v.as_slice()).collect()
}

fn to_fields(grid: &Arc<GridDomain>, v: Vec<Vec<f64>>) -> Vec<ScalarField> {
    v.into_iter()
        .map(|x| ScalarField::from_vec_unchecked(grid, x))
        .collect()
}

/// States at `t_0, ..., t_nt`.
pub fn forward_solve(grid: &Arc<GridDomain>, traj: &ControlTrajectory, y0: &ScalarField) -> Result<Vec<ScalarField>> {
    grid.ensure_same(traj.grid())?;
    grid.ensure_same(y0.grid())?;
    let states = forward_states(grid, traj.dt(), &traj.slice_values(), y0.values())?;
    Ok(to_fields(grid, states))
}

/// Adjoint states `p_0, ..., p_nt` with `p_nt = terminal` and
/// `p_k = M_k^{-1} p_{k+1}`, so that `<p_0, y_0> = <terminal, y_nt>`.
pub fn adjoint_solve(
    grid: &Arc<GridDomain>,
    traj: &ControlTrajectory,
    terminal: &ScalarField,
) -> Result<Vec<ScalarField>> {
    grid.ensure_same(traj.grid())?;
    grid.ensure_same(terminal.grid())?;
    let solver = StepSolver::new(grid, traj.dt())?;
    Ok(to_fields(
        grid,
        adjoint_with(&solver, &traj.slice_values(), terminal.values())?,
    ))
}

fn gradient_values(states: &[Vec<f64>], adjoints: &[Vec<f64>], dt: f64) -> Vec<Vec<f64>> {
    (0..states.len() - 1)
        .map(|k| {
            states[k + 1]
                .iter()
                .zip(&adjoints[k])
                .map(|(y, p)| dt * y * p)
                .collect()
        })
        .collect()
}

/// Per-slice gradient densities `g_k = dt * y_{k+1} .* p_k`: the derivative
/// of the objective with respect to `V_k` at cell `i` is `h^2 g_k(i)`. The
/// state is the one at the end of step `k` and the adjoint the one at its
/// start, which is what the implicit step differentiates to.
pub fn control_gradient(states: &[ScalarField], adjoints: &[ScalarField], dt: f64) -> Result<Vec<ScalarField>> {
    if states.len() != adjoints.len() || states.len() < 2 {
        return Err(Error::LengthMismatch(format!(
            "{} states and {} adjoints (need equal lengths of at least 2)",
            states.len(),
            adjoints.len()
        )));
    }
    let grid = states[0].grid().clone();
    for f in states.iter().chain(adjoints) {
        grid.ensure_same(f.grid())?;
    }
    let s: Vec<Vec<f64>> = states.iter().map(|f| f.values().to_vec()).collect();
    let a: Vec<Vec<f64>> = adjoints.iter().map(|f| f.values().to_vec()).collect();
    Ok(to_fields(&grid, gradient_values(&s, &a, dt)))
}

/// `h^2 sum y(T)`.
pub fn objective(grid: &Arc<GridDomain>, traj: &ControlTrajectory, y0: &ScalarField) -> Result<f64> {
    let states = forward_solve(grid, traj, y0)?;
    Ok(grid.cell_area() * states.last().unwrap().values().iter().sum::<f64>())
}

/// Starting point of the conditional-gradient iteration.
#[derive(Clone, Debug)]
pub enum ControlInit {
    /// `V = V0 / |Omega|` at all times.
    Uniform,
    Static(Potential),
    Trajectory(ControlTrajectory),
}

#[derive(Clone, Debug)]
pub struct ControlOptions {
    pub max_iter: usize,
    /// Stop when the duality gap falls below this fraction of the objective.
    pub gap_tol: f64,
    pub init: ControlInit,
}

impl Default for ControlOptions {
    fn default() -> Self {
        ControlOptions {
            max_iter: 60,
            gap_tol: 1e-7,
            init: ControlInit::Uniform,
        }
    }
}

/// Outcome of the conditional-gradient iteration.
#[derive(Clone, Debug)]
pub struct ControlSolution {
    pub trajectory: ControlTrajectory,
    pub objective: f64,
    /// Objective after each accepted step, starting with the initialization.
    pub history: Vec<f64>,
    /// Last duality gap `h^2 sum_k <g_k, W_k - V_k>`.
    pub duality_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when a line search failed to find an ascent step.
    pub stalled: bool,
}

/// Conditional gradient (Frank-Wolfe) for `sup h^2 sum y(T)`.
///
/// The linear maximization over admissible potentials is the bathtub
/// projection of the gradient slice by slice; the step toward that vertex is
/// chosen by halving from 1 until the objective rises by at least
/// `1e-4 * step * gap`.
pub fn optimize_control(
    grid: &Arc<GridDomain>,
    v0: f64,
    horizon: f64,
    nt: usize,
    y0: &ScalarField,
    opts: &ControlOptions,
) -> Result<ControlSolution> {
    grid.ensure_same(y0.grid())?;
    check_initial(y0.values())?;
    if nt == 0 {
        return Err(Error::InvalidArgument("nt must be at least 1".into()));
    }
    let init = match &opts.init {
        ControlInit::Uniform => ControlTrajectory::constant(grid, horizon, nt, &Potential::uniform(grid, v0)?)?,
        ControlInit::Static(v) => ControlTrajectory::constant(grid, horizon, nt, v)?,
        ControlInit::Trajectory(t) => {
            if t.nt() != nt || (t.horizon() - horizon).abs() > 1e-12 * horizon {
                return Err(Error::InvalidArgument(
                    "initial trajectory has a different time grid".into(),
                ));
            }
            t.clone()
        }
    };
    let dt = init.dt();
    let a = grid.cell_area();
    let solver = StepSolver::new(grid, dt)?;
    let ones = vec![1.0; grid.len()];
    let mut slices: Vec<Vec<f64>> = init.slices.iter().map(|s| s.values().to_vec()).collect();
    let mut states = forward_with(&solver, &refs(&slices), y0.values())?;
    let mut value = a * states[nt].iter().sum::<f64>();
    let mut history = vec![value];
    let mut duality_gap = f64::INFINITY;
    let mut converged = false;
    let mut stalled = false;
    let mut iterations = 0;

    for _ in 0..opts.max_iter {
        let adj = adjoint_with(&solver, &refs(&slices), &ones)?;
        let grads = gradient_values(&states, &adj, dt);
        let mut vertices = Vec::with_capacity(nt);
        let mut gap = 0.0;
        for (g, v) in grads.iter().zip(&slices) {
            let field = ScalarField::from_vec_unchecked(grid, g.clone());
            let w = bathtub_projection(&field, v0)?.field().values().to_vec();
            gap += a * g
                .iter()
                .zip(&w)
                .zip(v)
                .map(|((gi, wi), vi)| gi * (wi - vi))
                .sum::<f64>();
            vertices.push(w);
        }
        duality_gap = gap;
        if gap <= opts.gap_tol * value.abs() {
            converged = true;
            break;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<Vec<f64>> = slices
                .iter()
                .zip(&vertices)
                .map(|(v, w)| v.iter().zip(w).map(|(vi, wi)| vi + step * (wi - vi)).collect())
                .collect();
            let trial_states = forward_with(&solver, &refs(&trial), y0.values())?;
            let trial_value = a * trial_states[nt].iter().sum::<f64>();
            if trial_value >= value + ARMIJO * step * gap {
                accepted = Some((trial, trial_states, trial_value));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((s, st, v)) => {
                slices = s;
                states = st;
                value = v;
                history.push(v);
                iterations += 1;
            }
            None => {
                stalled = true;
                break;
            }
        }
    }

    let potentials = slices
        .into_iter()
        .map(|v| Potential::from_values(grid, v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect(), v0))
        .collect::<Result<Vec<_>>>()?;
    Ok(ControlSolution {
        trajectory: ControlTrajectory::new(grid, horizon, potentials)?,
        objective: value,
        history,
        duality_gap,
        iterations,
        converged,
        stalled,
    })
}

/// `L^1` distance of every slice to the nearest registry entry.
pub fn slice_distances(traj: &ControlTrajectory, registry: &OptimalSetRegistry) -> Result<Vec<f64>> {
    traj.slices
        .iter()
        .map(|s| nearest_entry(traj.grid(), s.values(), registry).map(|p| p.1))
        .collect()
}

/// `sum_k dt * dist(V_k, optima)^2`.
pub fn turnpike_integral(traj: &ControlTrajectory, registry: &OptimalSetRegistry) -> Result<f64> {
    let dt = traj.dt();
    Ok(slice_distances(traj, registry)?.iter().map(|d| dt * d * d).sum())
}

/// Principal eigenvalue of every slice, warm-started along the trajectory
/// and reused across identical consecutive slices.
pub fn slice_eigenvalues(traj: &ControlTrajectory) -> Result<Vec<f64>> {
    let grid = traj.grid();
    let mut out = Vec::with_capacity(traj.nt());
    let mut prev: Option<(&[f64], f64, ScalarField)> = None;
    for s in &traj.slices {
        if let Some((v, l, _)) = &prev {
            if *v == s.values() {
                out.push(*l);
                continue;
            }
        }
        let guess = prev.as_ref().map(|p| p.2.values());
        let e = eigenpair_for_values(grid, s.values(), DEFAULT_EIGEN_TOL, guess)?;
        out.push(e.lambda);
        prev = Some((s.values(), e.lambda, e.u));
    }
    Ok(out)
}

/// Energy-decay margins along a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct GronwallReport {
    /// `log B0 - 2 sum log(1 + dt lambda_k) - log |y_nt|^2`; nonnegative for
    /// implicit Euler up to solver error.
    pub margin: f64,
    /// `log B0 - 2 sum dt lambda_k - log |y_nt|^2`, the time-continuous
    /// form, which carries an `O(T dt)` bias.
    pub raw_margin: f64,
    pub slice_lambdas: Vec<f64>,
}

/// Compares `|y(T)|^2` with the decay bound built from the slice
/// eigenvalues, `B0 = |y0|^2`.
pub fn gronwall_check(grid: &Arc<GridDomain>, traj: &ControlTrajectory, y0: &ScalarField) -> Result<GronwallReport> {
    let states = forward_solve(grid, traj, y0)?;
    let lambdas = slice_eigenvalues(traj)?;
    gronwall_from(grid, traj.dt(), y0.values(), states.last().unwrap().values(), lambdas)
}

fn gronwall_from(grid: &GridDomain, dt: f64, y0: &[f64], yt: &[f64], lambdas: Vec<f64>) -> Result<GronwallReport> {
    let a = grid.cell_area();
    let b0 = a * dot(y0, y0);
    let bt = a * dot(yt, yt);
    if !(bt > 0.0) {
        return Err(Error::ZeroField);
    }
    let continuous: f64 = lambdas.iter().map(|l| dt * l).sum();
    let stepped: f64 = lambdas.iter().map(|l| (1.0 + dt * l).ln()).sum();
    Ok(GronwallReport {
        margin: b0.ln() - 2.0 * stepped - bt.ln(),
        raw_margin: b0.ln() - 2.0 * continuous - bt.ln(),
        slice_lambdas: lambdas,
    })
}

/// Exponential rate of `h^2 sum y(t)` under a constant control.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit {
    /// Slope of `log objective` against `t`.
    pub slope: f64,
    pub intercept: f64,
    /// Rate with the implicit-Euler bias removed, `(exp(-slope dt) - 1) / dt`.
    pub rate: f64,
}

/// Fits `log(h^2 sum y_k)` against `t_k` over `[t_from, t_to]`.
pub fn decay_fit(grid: &GridDomain, dt: f64, states: &[ScalarField], t_from: f64, t_to: f64) -> Option<DecayFit> {
    let a = grid.cell_area();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (k, s) in states.iter().enumerate() {
        let t = k as f64 * dt;
        if t >= t_from - 1e-12 && t <= t_to + 1e-12 {
            let m = a * s.values().iter().sum::<f64>();
            if m > 0.0 {
                x.push(t);
                y.push(m.ln());
            }
        }
    }
    let slope = fit_slope(&x, &y)?;
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    Some(DecayFit {
        slope,
        intercept: my - slope * mx,
        rate: ((-slope * dt).exp() - 1.0) / dt,
    })
}

/// Summary of one horizon.
#[derive(Clone, Debug)]
pub struct TurnpikeReport {
    pub horizon: f64,
    pub nt: usize,
    pub objective: f64,
    /// Objective of the constant control `V = V*`.
    pub static_objective: f64,
    pub turnpike_integral: f64,
    pub per_slice_dist: Vec<f64>,
    pub slice_lambdas: Vec<f64>,
    /// `h^2 sum y0 u*`.
    pub a0: f64,
    /// Decay of the constant-control objective over `[T/4, T]`.
    pub decay: Option<DecayFit>,
    pub gronwall: GronwallReport,
    pub iterations: usize,
    pub converged: bool,
    pub stalled: bool,
    /// Which initialization produced the reported trajectory.
    pub init: &'static str,
}

impl TurnpikeReport {
    pub fn decay_slope(&self) -> f64 {
        self.decay.as_ref().map_or(f64::NAN, |d| d.slope)
    }

    /// `slice_index,t,dist_to_registry,lambda_slice`
    pub fn write_trajectory_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "slice_index,t,dist_to_registry,lambda_slice")?;
        let dt = self.horizon / self.nt as f64;
        for (k, (d, l)) in self.per_slice_dist.iter().zip(&self.slice_lambdas).enumerate() {
            writeln!(w, "{k},{},{d},{l}", k as f64 * dt)?;
        }
        Ok(())
    }
}

/// `T,objective,turnpike_integral,A0,decay_slope,gronwall_margin`
pub fn write_turnpike_csv(reports: &[TurnpikeReport], mut w: impl Write) -> Result<()> {
    writeln!(w, "T,objective,turnpike_integral,A0,decay_slope,gronwall_margin")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.horizon,
            r.objective,
            r.turnpike_integral,
            r.a0,
            r.decay_slope(),
            r.gronwall.margin
        )?;
    }
    Ok(())
}

/// Solves one horizon and measures it against the registry.
///
/// The iteration starts from the uniform control; when that run ends below
/// the constant control `V*` it is repeated from `V*` and the better result
/// is kept.
pub fn turnpike_report(
    grid: &Arc<GridDomain>,
    registry: &OptimalSetRegistry,
    v0: f64,
    y0: &ScalarField,
    horizon: f64,
    nt: usize,
    max_iter: usize,
) -> Result<(ControlSolution, TurnpikeReport)> {
    if registry.is_empty() {
        return Err(Error::EmptyRegistry);
    }
    grid.ensure_same(registry.grid())?;
    grid.ensure_same(y0.grid())?;
    let best = &registry.entries[0];
    let static_traj = ControlTrajectory::constant(grid, horizon, nt, &best.potential)?;
    let static_states = forward_solve(grid, &static_traj, y0)?;
    let static_objective = grid.cell_area() * static_states[nt].values().iter().sum::<f64>();
    let decay = decay_fit(grid, static_traj.dt(), &static_states, 0.25 * horizon, horizon);

    let mut opts = ControlOptions {
        max_iter,
        ..ControlOptions::default()
    };
    let mut sol = optimize_control(grid, v0, horizon, nt, y0, &opts)?;
    let mut init = "uniform";
    if sol.objective < static_objective {
        opts.init = ControlInit::Static(best.potential.clone());
        let alt = optimize_control(grid, v0, horizon, nt, y0, &opts)?;
        if alt.objective > sol.objective {
            sol = alt;
            init = "static";
        }
    }
    let per_slice_dist = slice_distances(&sol.trajectory, registry)?;
    let dt = sol.trajectory.dt();
    let turnpike_integral = per_slice_dist.iter().map(|d| dt * d * d).sum();
    let states = forward_solve(grid, &sol.trajectory, y0)?;
    let lambdas = slice_eigenvalues(&sol.trajectory)?;
    let gronwall = gronwall_from(grid, dt, y0.values(), states[nt].values(), lambdas.clone())?;
    let a0 = grid.cell_area() * dot(y0.values(), best.eigen.u.values());
    let report = TurnpikeReport {
        horizon,
        nt,
        objective: sol.objective,
        static_objective,
        turnpike_integral,
        per_slice_dist,
        slice_lambdas: lambdas,
        a0,
        decay,
        gronwall,
        iterations: sol.iterations,
        converged: sol.converged,
        stalled: sol.stalled,
        init,
    };
    Ok((sol, report))
}

/// Reports for every horizon, plus the saturation diagnostics.
#[derive(Clone, Debug)]
pub struct HorizonSweep {
    pub reports: Vec<TurnpikeReport>,
    pub trajectories: Vec<ControlTrajectory>,
    /// Horizons whose solve failed, with the error text.
    pub failures: Vec<(f64, String)>,
    /// Least-squares slope of the turnpike integral against `T` over the
    /// upper half of the horizons.
    pub growth_slope: Option<f64>,
    pub seed: u64,
}

impl HorizonSweep {
    /// Growth slope at most `tol` times `integral(T_min) / T_min`.
    pub fn is_saturated(&self, tol: f64) -> Option<bool> {
        let first = self.reports.first()?;
        let slope = self.growth_slope?;
        Some(slope <= tol * first.turnpike_integral / first.horizon)
    }
}

/// Runs [`turnpike_report`] for each horizon with
/// `nt = ceil(T * nt_per_unit)`, in parallel over horizons. Failed horizons
/// are recorded and skipped. `seed` is recorded only: the iteration is
/// deterministic.
#[allow(clippy::too_many_arguments)]
pub fn horizon_sweep(
    grid: &Arc<GridDomain>,
    registry: &OptimalSetRegistry,
    v0: f64,
    y0: &ScalarField,
    horizons: &[f64],
    nt_per_unit: f64,
    max_iter: usize,
    seed: u64,
) -> Result<HorizonSweep> {
    if registry.is_empty() {
        return Err(Error::EmptyRegistry);
    }
    grid.ensure_same(registry.grid())?;
    if horizons.is_empty() || horizons.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "horizons must be nonempty and strictly increasing".into(),
        ));
    }
    if !(nt_per_unit > 0.0) {
        return Err(Error::InvalidArgument("nt_per_unit must be positive".into()));
    }
    let results: Vec<(f64, Result<(ControlSolution, TurnpikeReport)>)> = horizons
        .par_iter()
        .map(|&t| {
            let nt = (t * nt_per_unit).ceil().max(1.0) as usize;
            (t, turnpike_report(grid, registry, v0, y0, t, nt, max_iter))
        })
        .collect();
    let mut reports = Vec::new();
    let mut trajectories = Vec::new();
    let mut failures = Vec::new();
    for (t, r) in results {
        match r {
            Ok((sol, rep)) => {
                trajectories.push(sol.trajectory);
                reports.push(rep);
            }
            Err(e) => failures.push((t, e.to_string())),
        }
    }
    let upper = &reports[reports.len() / 2..];
    let growth_slope = if upper.len() >= 2 {
        let x: Vec<f64> = upper.iter().map(|r| r.horizon).collect();
        let y: Vec<f64> = upper.iter().map(|r| r.turnpike_integral).collect();
        fit_slope(&x, &y)
    } else {
        None
    };
    Ok(HorizonSweep {
        reports,
        trajectories,
        failures,
        growth_slope,
        seed,
    })
}
