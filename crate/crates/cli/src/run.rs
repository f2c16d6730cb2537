//! Command pipelines. Every stage writes its files as soon as they are
//! ready, so a numerical failure later on leaves the earlier outputs (and a
//! manifest describing them) in place.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context as _};
use serde::Serialize;
use sha2::{Digest, Sha256};

use spectral_turnpike::bathtub::{bathtub_deficit, schwarz_bound};
use spectral_turnpike::control::{horizon_sweep, turnpike_report, write_turnpike_csv, TurnpikeReport};
use spectral_turnpike::io::dump_field;
use spectral_turnpike::optimizer::{
    enumerate_optima_with, shape_derivative_check_base, DeformationField, DescentOptions, MultistartOptions, ShapeBase,
    ShapeCheckReport,
};
use spectral_turnpike::rng::stream_key;
use spectral_turnpike::spectral::dirichlet_ground_eigenvalue;
use spectral_turnpike::stability::{estimate_constant, sample_shell};
use spectral_turnpike::{GridDomain, OptimalSetRegistry, ScalarField};

use crate::config::{Diagnostic, ExperimentConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Optimize,
    Stability,
    BathtubCheck,
    ShapeCheck,
    Control,
    TurnpikeSweep,
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Optimize => "optimize",
            Command::Stability => "stability",
            Command::BathtubCheck => "bathtub-check",
            Command::ShapeCheck => "shape-check",
            Command::Control => "control",
            Command::TurnpikeSweep => "turnpike-sweep",
            Command::All => "all",
        }
    }
}

#[derive(Debug)]
pub enum RunError {
    Invalid(Vec<Diagnostic>),
    Numerical(anyhow::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Invalid(_) => 1,
            RunError::Numerical(_) => 2,
        }
    }
}

/// What a successful run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
    pub manifest: PathBuf,
}

#[derive(Serialize)]
struct FileRecord {
    path: String,
    sha256: String,
    bytes: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    status: &'a str,
    error: Option<String>,
    config: &'a ExperimentConfig,
    wall_time_s: f64,
    summary: &'a [String],
    files: Vec<FileRecord>,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    grid: Arc<GridDomain>,
    v0: f64,
    dir: PathBuf,
    files: Vec<PathBuf>,
    summary: Vec<String>,
    registry: Option<OptimalSetRegistry>,
}

impl Context<'_> {
    fn write(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        body(&mut w)?;
        w.flush()?;
        self.files.push(path);
        Ok(())
    }

    fn dump(&mut self, field: &ScalarField, stem: &str) -> anyhow::Result<()> {
        let paths = dump_field(field, &self.dir, stem)?;
        self.files.extend(paths);
        Ok(())
    }

    fn note(&mut self, line: String) {
        self.summary.push(line);
    }

    fn registry(&mut self) -> anyhow::Result<&OptimalSetRegistry> {
        if self.registry.is_none() {
            optimize(self)?;
        }
        Ok(self.registry.as_ref().unwrap())
    }
}

/// Validates `cfg`, runs `command` and writes `manifest.json` into the
/// output directory, also when a stage fails.
pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    let diags = cfg.validate();
    if !diags.is_empty() {
        return Err(RunError::Invalid(diags));
    }
    let start = Instant::now();
    let grid = cfg.grid().map_err(|e| RunError::Numerical(e.into()))?;
    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))
        .map_err(RunError::Numerical)?;
    let mut ctx = Context {
        cfg,
        v0: cfg.v0(&grid),
        grid,
        dir: cfg.output_dir.clone(),
        files: Vec::new(),
        summary: Vec::new(),
        registry: None,
    };
    let result = pipeline(command, &mut ctx);
    let manifest = write_manifest(command, &ctx, start, result.as_ref().err()).map_err(RunError::Numerical)?;
    match result {
        Ok(()) => Ok(RunOutcome {
            files: ctx.files,
            summary: ctx.summary,
            manifest,
        }),
        Err(e) => Err(RunError::Numerical(e)),
    }
}

fn pipeline(command: Command, ctx: &mut Context) -> anyhow::Result<()> {
    match command {
        Command::Optimize => optimize(ctx),
        Command::Stability => stability(ctx),
        Command::BathtubCheck => bathtub_check(ctx),
        Command::ShapeCheck => shape_check(ctx),
        Command::Control => control(ctx),
        Command::TurnpikeSweep => turnpike_sweep(ctx),
        Command::All => {
            optimize(ctx)?;
            bathtub_check(ctx)?;
            stability(ctx)?;
            shape_check(ctx)?;
            turnpike_sweep(ctx)
        }
    }
}

fn write_manifest(
    command: Command,
    ctx: &Context,
    start: Instant,
    err: Option<&anyhow::Error>,
) -> anyhow::Result<PathBuf> {
    let files = ctx
        .files
        .iter()
        .map(|p| {
            let bytes = fs::read(p).with_context(|| format!("reading back {}", p.display()))?;
            Ok(FileRecord {
                path: relative(p, &ctx.dir),
                sha256: hex::encode(Sha256::digest(&bytes)),
                bytes: bytes.len() as u64,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let m = Manifest {
        command: command.name(),
        status: if err.is_none() { "ok" } else { "numerical_failure" },
        error: err.map(|e| format!("{e:#}")),
        config: ctx.cfg,
        wall_time_s: start.elapsed().as_secs_f64(),
        summary: &ctx.summary,
        files,
    };
    let path = ctx.dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(path)
}

fn relative(p: &Path, dir: &Path) -> String {
    p.strip_prefix(dir).unwrap_or(p).to_string_lossy().into_owned()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn optimize(ctx: &mut Context) -> anyhow::Result<()> {
    let o = &ctx.cfg.optimizer;
    let lambda_d = dirichlet_ground_eigenvalue(&ctx.grid)?;
    let opts = MultistartOptions {
        n_starts: o.n_starts,
        seed: ctx.cfg.seed,
        cluster_tol: Some(o.cluster_tol_rel * lambda_d.abs()),
        beta: Some(o.beta_rel * ctx.grid.measure()),
        descent: DescentOptions {
            max_iter: o.max_iter,
            fp_tol: o.fp_tol,
            ..DescentOptions::default()
        },
    };
    let reg = enumerate_optima_with(&ctx.grid, ctx.v0, &opts)?;
    ctx.write("registry.csv", |w| Ok(reg.write_csv(w)?))?;
    ctx.write("descent.csv", |w| {
        writeln!(w, "run,iteration,lambda,residual")?;
        for (r, h) in reg.histories.iter().enumerate() {
            for (k, (l, res)) in h.iterates.iter().enumerate() {
                writeln!(w, "{r},{},{l},{res}", k + 1)?;
            }
        }
        Ok(())
    })?;
    for (k, e) in reg.entries.iter().enumerate() {
        ctx.dump(e.potential.field(), &format!("entry_{k}_potential"))?;
        ctx.dump(&e.eigen.u, &format!("entry_{k}_eigenfunction"))?;
    }
    ctx.note(format!(
        "optimize: {} entries, lambda_bar = {}, hopf = {}, failed starts = {}",
        reg.len(),
        reg.lambda_bar,
        reg.entries.iter().map(|e| e.hopf).fold(f64::INFINITY, f64::min),
        reg.failed_starts
    ));
    ctx.registry = Some(reg);
    Ok(())
}

fn stability(ctx: &mut Context) -> anyhow::Result<()> {
    let s = ctx.cfg.stability.clone();
    let deltas: Vec<f64> = s.delta_fractions.iter().map(|f| f * ctx.v0).collect();
    let (grid, seed) = (ctx.grid.clone(), ctx.cfg.seed);
    let reg = ctx.registry()?;
    let report = estimate_constant(&grid, reg, &deltas, s.n_per_delta, s.local_descent, seed)?;
    ctx.write("stability_samples.csv", |w| Ok(report.write_csv(w)?))?;
    ctx.write("stability_summary.csv", |w| Ok(report.write_summary_csv(w)?))?;
    ctx.write("stability_fit.csv", |w| {
        writeln!(
            w,
            "estimated_c,raw_estimated_c,gap_exponent,lambda_bar,min_gap,invalid_registry"
        )?;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            report.estimated_c,
            report.raw_estimated_c,
            report.gap_exponent.unwrap_or(f64::NAN),
            report.lambda_bar,
            report.min_gap,
            report.invalid_registry
        )?;
        Ok(())
    })?;
    ctx.note(format!(
        "stability: C = {}, gap exponent = {}",
        report.estimated_c,
        report.gap_exponent.unwrap_or(f64::NAN)
    ));
    report.validate()?;
    Ok(())
}

fn bathtub_check(ctx: &mut Context) -> anyhow::Result<()> {
    let b = ctx.cfg.bathtub.clone();
    let (v0, seed) = (ctx.v0, stream_key(ctx.cfg.seed, "bathtub-check"));
    let reg = ctx.registry()?;
    let f = reg.entries[0].eigen.u.clone();
    let mut rows = Vec::new();
    for frac in &b.delta_fractions {
        let delta = frac * v0;
        for (i, v) in sample_shell(reg, 0, delta, b.n_per_delta, seed)?.iter().enumerate() {
            let d = bathtub_deficit(&f, v, v0)?;
            rows.push((delta, i, d.gap, d.distance, d.ratio()));
        }
    }
    let bound = schwarz_bound(&f, v0)?;
    ctx.write("bathtub_ratios.csv", |w| {
        writeln!(w, "delta,sample_id,gap,distance,ratio")?;
        for (delta, i, gap, dist, ratio) in &rows {
            writeln!(w, "{delta},{i},{gap},{dist},{ratio}")?;
        }
        Ok(())
    })?;
    let mut mins = Vec::new();
    ctx.write("bathtub_summary.csv", |w| {
        writeln!(w, "delta,min_ratio,median_ratio,n")?;
        for frac in &b.delta_fractions {
            let delta = frac * v0;
            let r: Vec<f64> = rows.iter().filter(|x| x.0 == delta).map(|x| x.4).collect();
            let min = r.iter().copied().fold(f64::INFINITY, f64::min);
            mins.push(min);
            writeln!(w, "{delta},{min},{},{}", median(r.clone()), r.len())?;
        }
        Ok(())
    })?;
    ctx.write("schwarz_bound.csv", |w| {
        writeln!(
            w,
            "radial_slope,steepness,ball_perimeter,level_perimeter,lower_bound,holds"
        )?;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            bound.radial_slope,
            bound.steepness,
            bound.ball_perimeter,
            bound.level_perimeter,
            bound.lower_bound(),
            bound.holds()
        )?;
        Ok(())
    })?;
    let lo = mins.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mins.iter().copied().fold(0.0, f64::max);
    ctx.note(format!("bathtub-check: per-shell minimum ratios in [{lo}, {hi}]"));
    Ok(())
}

/// Deformation probes at the first optimum and at a ball of the same mass
/// moved off its centroid.
fn shape_check(ctx: &mut Context) -> anyhow::Result<()> {
    let s = ctx.cfg.shape.clone();
    let grid = ctx.grid.clone();
    let v0 = ctx.v0;
    let reg = ctx.registry()?;
    let entry = &reg.entries[0];
    let vals = entry.potential.values();
    let total: f64 = vals.iter().sum();
    let (cx, cy) = vals.iter().enumerate().fold((0.0, 0.0), |(ax, ay), (c, &v)| {
        let (x, y) = grid.position(c);
        (ax + v * x / total, ay + v * y / total)
    });
    let radius = (v0 / PI).sqrt();
    let support = s.support_factor * radius;
    let ball = (cx + 0.3 * radius, cy);
    let multiplier = entry.multiplier;
    let fields = |c: (f64, f64)| {
        [
            ("radial", DeformationField::RadialBump { center: c, support }),
            (
                "translation",
                DeformationField::Translation {
                    center: c,
                    support,
                    direction: (1.0, 0.0),
                },
            ),
        ]
    };
    let t_for = |phi: &DeformationField| -> Vec<f64> {
        s.displacement_cells
            .iter()
            .map(|k| k * grid.h() / phi.max_norm())
            .collect()
    };
    let mut reports: Vec<(&str, &str, ShapeCheckReport)> = Vec::new();
    for (name, phi) in fields((cx, cy)) {
        let r = shape_derivative_check_base(
            &grid,
            ShapeBase::Indicator(&entry.potential),
            multiplier,
            &phi,
            &t_for(&phi),
        )
        .with_context(|| format!("optimum, {name} field"))?;
        reports.push(("optimum", name, r));
    }
    for (name, phi) in fields(ball) {
        let base = ShapeBase::Ball { center: ball, radius };
        let r = shape_derivative_check_base(&grid, base, multiplier, &phi, &t_for(&phi))
            .with_context(|| format!("off-center ball, {name} field"))?;
        reports.push(("ball", name, r));
    }
    ctx.write("shape_check.csv", |w| {
        writeln!(w, "case,field,t,lambda,volume,lagrangian")?;
        for (case, field, r) in &reports {
            for k in 0..r.t_values.len() {
                writeln!(
                    w,
                    "{case},{field},{},{},{},{}",
                    r.t_values[k], r.lambdas[k], r.volumes[k], r.lagrangian[k]
                )?;
            }
        }
        Ok(())
    })?;
    ctx.write("shape_summary.csv", |w| {
        writeln!(w, "case,field,fd_slope,hadamard_slope,surface_slope,multiplier")?;
        for (case, field, r) in &reports {
            writeln!(
                w,
                "{case},{field},{},{},{},{}",
                r.fd_slope,
                r.hadamard_slope,
                r.surface_slope.unwrap_or(f64::NAN),
                r.multiplier
            )?;
        }
        Ok(())
    })?;
    let slope = |case: &str, field: &str| {
        reports
            .iter()
            .find(|r| r.0 == case && r.1 == field)
            .map_or(f64::NAN, |r| r.2.fd_slope)
    };
    ctx.note(format!(
        "shape-check: optimum slopes {} / {}, ball slopes {} / {} (radial / translation)",
        slope("optimum", "radial"),
        slope("optimum", "translation"),
        slope("ball", "radial"),
        slope("ball", "translation")
    ));
    Ok(())
}

fn steps_for(horizon: f64, nt_per_unit: f64) -> usize {
    ((horizon * nt_per_unit).ceil() as usize).max(1)
}

fn report_line(r: &TurnpikeReport) -> String {
    format!(
        "T = {}: objective = {}, static = {}, turnpike integral = {}, gronwall margin = {}",
        r.horizon, r.objective, r.static_objective, r.turnpike_integral, r.gronwall.margin
    )
}

fn dump_slices(ctx: &mut Context, slices: &[spectral_turnpike::Potential], tag: &str) -> anyhow::Result<()> {
    let stride = ctx.cfg.control.dump_stride;
    if stride == 0 {
        return Ok(());
    }
    for (k, v) in slices.iter().enumerate().step_by(stride) {
        ctx.dump(v.field(), &format!("{tag}_slice_{k:05}"))?;
    }
    Ok(())
}

/// One optimal-control solve at the longest configured horizon.
fn control(ctx: &mut Context) -> anyhow::Result<()> {
    let c = ctx.cfg.control.clone();
    let horizon = *c.t_list.last().unwrap();
    let grid = ctx.grid.clone();
    let v0 = ctx.v0;
    let y0 = c.y0.field(&grid)?;
    let reg = ctx.registry()?;
    let (sol, report) = turnpike_report(
        &grid,
        reg,
        v0,
        &y0,
        horizon,
        steps_for(horizon, c.nt_per_unit),
        c.max_iter,
    )?;
    ctx.write("control_report.csv", |w| {
        Ok(write_turnpike_csv(std::slice::from_ref(&report), w)?)
    })?;
    ctx.write("control_trajectory.csv", |w| Ok(report.write_trajectory_csv(w)?))?;
    ctx.write("control_history.csv", |w| {
        writeln!(w, "iteration,objective")?;
        for (k, j) in sol.history.iter().enumerate() {
            writeln!(w, "{k},{j}")?;
        }
        Ok(())
    })?;
    dump_slices(ctx, sol.trajectory.slices(), "control")?;
    ctx.note(format!("control: {}", report_line(&report)));
    if !sol.converged {
        ctx.note(format!(
            "control: stopped after {} iterations with duality gap {}",
            sol.iterations, sol.duality_gap
        ));
    }
    Ok(())
}

fn turnpike_sweep(ctx: &mut Context) -> anyhow::Result<()> {
    let c = ctx.cfg.control.clone();
    let grid = ctx.grid.clone();
    let (v0, seed) = (ctx.v0, ctx.cfg.seed);
    let y0 = c.y0.field(&grid)?;
    let reg = ctx.registry()?;
    let sweep = horizon_sweep(&grid, reg, v0, &y0, &c.t_list, c.nt_per_unit, c.max_iter, seed)?;
    ctx.write("turnpike.csv", |w| Ok(write_turnpike_csv(&sweep.reports, w)?))?;
    for r in &sweep.reports {
        ctx.write(&format!("trajectory_T{}.csv", r.horizon), |w| {
            Ok(r.write_trajectory_csv(w)?)
        })?;
    }
    ctx.write("turnpike_fit.csv", |w| {
        writeln!(w, "growth_slope,saturated")?;
        let sat = sweep
            .is_saturated(0.05)
            .map_or("unknown".to_string(), |b| b.to_string());
        writeln!(w, "{},{sat}", sweep.growth_slope.unwrap_or(f64::NAN))?;
        Ok(())
    })?;
    if let (Some(r), Some(t)) = (sweep.reports.last(), sweep.trajectories.last()) {
        let tag = format!("T{}", r.horizon);
        dump_slices(ctx, t.slices(), &tag)?;
    }
    for r in &sweep.reports {
        ctx.note(format!("turnpike-sweep: {}", report_line(r)));
    }
    if !sweep.failures.is_empty() {
        let list: Vec<String> = sweep.failures.iter().map(|(t, e)| format!("T = {t}: {e}")).collect();
        return Err(anyhow!("{} horizons failed: {}", list.len(), list.join("; ")));
    }
    Ok(())
}
