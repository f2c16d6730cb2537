//! End-to-end acceptance run. Prints one `[PASS]` or `[FAIL]` line per
//! criterion and exits nonzero if any criterion fails.
//!
//! Run with `cargo test -p stlab --test acceptance`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spectral_turnpike::bathtub::{bathtub_projection, bathtub_stability_ratio};
use spectral_turnpike::control::{
    adjoint_solve, control_gradient, forward_solve, forward_states, gronwall_check, horizon_sweep, ControlTrajectory,
    HorizonSweep,
};
use spectral_turnpike::optimizer::{
    enumerate_optima_with, shape_derivative_check_base, DeformationField, MultistartOptions, ShapeBase,
};
use spectral_turnpike::spectral::{eigenpair_for_values, DEFAULT_EIGEN_TOL};
use spectral_turnpike::stability::{estimate_constant, fit_slope, sample_shell};
use spectral_turnpike::{build_grid, GridDomain, OptimalSetRegistry, Potential, ScalarField, Shape};

const V0_FRACTION: f64 = 0.3;
const SEED: u64 = 20240607;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

struct Setup {
    disk: Arc<GridDomain>,
    square: Arc<GridDomain>,
    disk_reg: OptimalSetRegistry,
    square_reg: OptimalSetRegistry,
}

impl Setup {
    fn v0(g: &GridDomain) -> f64 {
        V0_FRACTION * g.measure()
    }
}

fn registry(grid: &Arc<GridDomain>, n_starts: usize) -> OptimalSetRegistry {
    let opts = MultistartOptions {
        n_starts,
        seed: SEED,
        ..MultistartOptions::default()
    };
    enumerate_optima_with(grid, Setup::v0(grid), &opts).expect("multistart")
}

fn random_admissible(grid: &Arc<GridDomain>, v0: f64, rng: &mut ChaCha8Rng) -> Potential {
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

fn gaussian(grid: &Arc<GridDomain>, center: (f64, f64), width: f64) -> ScalarField {
    ScalarField::from_fn(grid, |x, y| {
        (-((x - center.0).powi(2) + (y - center.1).powi(2)) / (2.0 * width * width)).exp()
    })
    .unwrap()
}

fn y0_for(grid: &Arc<GridDomain>) -> ScalarField {
    match grid.shape() {
        Shape::Disk { .. } => gaussian(grid, (0.35, 0.2), 0.15),
        _ => gaussian(grid, (0.3, 0.4), 0.15),
    }
}

fn eigen_solver() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, shape, exact, tol) in [
        ("square", Shape::unit_square(), 2.0 * PI * PI, 0.01),
        ("disk", Shape::disk(1.0), 2.404_825_557_695_773_f64.powi(2), 0.02),
    ] {
        let g = build_grid(shape, 128).unwrap();
        let t = Instant::now();
        let e = eigenpair_for_values(&g, &vec![0.0; g.len()], DEFAULT_EIGEN_TOL, None).unwrap();
        let secs = t.elapsed().as_secs_f64();
        let rel = (e.lambda - exact).abs() / exact;
        pass &= rel <= tol && secs <= 10.0;
        parts.push(format!("{name} {:.4} (rel err {:.2e}, {:.2} s)", e.lambda, rel, secs));
    }
    verdict(pass, parts.join("; "))
}

fn shift_identity() -> Verdict {
    let g = build_grid(Shape::disk(1.0), 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let c = rng.gen_range(0.0..0.5);
        let v: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(0.0..0.5)).collect();
        let s: Vec<f64> = v.iter().map(|x| x + c).collect();
        let a = eigenpair_for_values(&g, &v, DEFAULT_EIGEN_TOL, None).unwrap();
        let b = eigenpair_for_values(&g, &s, DEFAULT_EIGEN_TOL, None).unwrap();
        worst = worst.max((b.lambda - (a.lambda - c)).abs());
    }
    verdict(
        worst <= 1e-8,
        format!("max |lambda(V + c) - lambda(V) + c| = {worst:.2e} over 20 pairs"),
    )
}

fn monotone_descent(s: &Setup) -> Verdict {
    let mut runs = 0;
    let mut bad = 0;
    for reg in [&s.disk_reg, &s.square_reg] {
        for h in &reg.histories {
            runs += 1;
            if !h.is_monotone(2.0 * DEFAULT_EIGEN_TOL) {
                bad += 1;
            }
        }
    }
    verdict(runs == 32 && bad == 0, format!("{runs} runs, {bad} with an increase"))
}

fn radial_ground_truth(s: &Setup) -> Verdict {
    let g = &s.disk;
    let v0 = Setup::v0(g);
    let r = (v0 / PI).sqrt();
    let reg = &s.disk_reg;
    let rounded = reg.entries[0].potential.rounded();
    let mismatches = (0..g.len())
        .filter(|&c| {
            let (x, y) = g.position(c);
            let inside = if x.hypot(y) < r { 1.0 } else { 0.0 };
            rounded[c] != inside
        })
        .count();
    let symdiff = mismatches as f64 * g.cell_area();
    let bound = 4.0 * 2.0 * PI * r * g.h();
    verdict(
        reg.len() == 1 && symdiff <= bound,
        format!(
            "{} entries, |E* sym diff B0| = {symdiff:.4} (bound {bound:.4})",
            reg.len()
        ),
    )
}

fn bathtub_optimality() -> Verdict {
    let g = build_grid(Shape::disk(1.0), 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 5);
    let mut violations = 0;
    for k in 0..1000 {
        let levels = k % 5;
        let f: Vec<f64> = (0..g.len())
            .map(|_| {
                if levels == 0 {
                    rng.gen_range(-1.0..1.0)
                } else {
                    rng.gen_range(0..levels) as f64
                }
            })
            .collect();
        let f = ScalarField::new(&g, f).unwrap();
        let v0 = rng.gen_range(0.05..0.95) * g.measure();
        let v = random_admissible(&g, v0, &mut rng);
        let p = bathtub_projection(&f, v0).unwrap();
        let dot = |w: &[f64]| f.values().iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        if dot(v.values()) > dot(p.values()) + 1e-12 * (1.0 + dot(p.values()).abs()) {
            violations += 1;
        }
    }
    verdict(violations == 0, format!("{violations} violations in 1000 pairs"))
}

fn quantitative_bathtub(s: &Setup) -> Verdict {
    let t = Instant::now();
    let reg = &s.disk_reg;
    let v0 = Setup::v0(&s.disk);
    let f = &reg.entries[0].eigen.u;
    let mut mins = Vec::new();
    for frac in [0.02, 0.05, 0.1, 0.2] {
        let shell = sample_shell(reg, 0, frac * v0, 200, SEED).unwrap();
        let m = shell
            .iter()
            .map(|v| bathtub_stability_ratio(f, v, v0).unwrap())
            .fold(f64::INFINITY, f64::min);
        mins.push(m);
    }
    let lo = mins.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mins.iter().copied().fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    verdict(
        lo > 0.0 && hi < 10.0 * lo && secs <= 300.0,
        format!(
            "per-shell minima {:?}, spread {:.2}x, {secs:.1} s",
            rounded4(&mins),
            hi / lo
        ),
    )
}

fn rounded4(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}

fn spectral_inequality(s: &Setup) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, g, reg) in [("square", &s.square, &s.square_reg), ("disk", &s.disk, &s.disk_reg)] {
        let t = Instant::now();
        let v0 = Setup::v0(g);
        let deltas: Vec<f64> = [0.05, 0.1, 0.2, 0.5].iter().map(|f| f * v0).collect();
        let r = estimate_constant(g, reg, &deltas, 100, true, SEED).unwrap();
        let secs = t.elapsed().as_secs_f64();
        let exp = r.gap_exponent.unwrap_or(f64::NAN);
        pass &= r.estimated_c > 0.0 && (1.7..=2.3).contains(&exp) && !r.invalid_registry && secs <= 1800.0;
        parts.push(format!(
            "{name} C = {:.4}, exponent {exp:.3}, {secs:.1} s",
            r.estimated_c
        ));
    }
    verdict(pass, parts.join("; "))
}

fn hopf_refinement(s: &Setup) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, shape, reg) in [
        ("disk", Shape::disk(1.0), &s.disk_reg),
        ("square", Shape::unit_square(), &s.square_reg),
    ] {
        let fine = registry(&build_grid(shape, 128).unwrap(), 2);
        let coarse = reg.entries.iter().map(|e| e.hopf).fold(f64::INFINITY, f64::min);
        let f = fine.entries.iter().map(|e| e.hopf).fold(f64::INFINITY, f64::min);
        let all_positive = reg.entries.iter().chain(&fine.entries).all(|e| e.hopf > 0.0);
        pass &= all_positive && f / coarse <= 2.0 && coarse / f <= 2.0;
        parts.push(format!("{name} {coarse:.4} -> {f:.4}"));
    }
    verdict(pass, parts.join("; "))
}

fn shape_criticality(s: &Setup) -> Verdict {
    let g = &s.disk;
    let entry = &s.disk_reg.entries[0];
    let v0 = Setup::v0(g);
    let radius = (v0 / PI).sqrt();
    let support = 1.5 * radius;
    let ts = |phi: &DeformationField| -> Vec<f64> {
        [-2.0, -1.0, 1.0, 2.0]
            .iter()
            .map(|k| k * g.h() / phi.max_norm())
            .collect()
    };
    let slope = |base: ShapeBase, phi: DeformationField| {
        shape_derivative_check_base(g, base, entry.multiplier, &phi, &ts(&phi)).unwrap()
    };
    let radial = DeformationField::RadialBump {
        center: (0.0, 0.0),
        support,
    };
    let shift = |c: (f64, f64)| DeformationField::Translation {
        center: c,
        support,
        direction: (1.0, 0.0),
    };
    let opt = [
        slope(ShapeBase::Indicator(&entry.potential), radial).fd_slope,
        slope(ShapeBase::Indicator(&entry.potential), shift((0.0, 0.0))).fd_slope,
    ];
    let off = (0.3 * radius, 0.0);
    let nonopt = slope(ShapeBase::Ball { center: off, radius }, shift(off)).fd_slope;
    let worst = opt[0].abs().max(opt[1].abs());
    let critical = 10.0 * worst <= nonopt.abs();

    // off-center ball in the unit square at resolution 128, with a bump that
    // pushes its left side toward the center of the square
    let fine = build_grid(Shape::unit_square(), 128).unwrap();
    let (c, r) = ((0.42, 0.55), (V0_FRACTION / PI).sqrt());
    let phi = DeformationField::RadialBump {
        center: (0.15, 0.5),
        support: 0.5,
    };
    let t: Vec<f64> = [-2.0, -1.0, 1.0, 2.0]
        .iter()
        .map(|k| k * fine.h() / phi.max_norm())
        .collect();
    let ball = shape_derivative_check_base(
        &fine,
        ShapeBase::Ball { center: c, radius: r },
        s.square_reg.entries[0].multiplier,
        &phi,
        &t,
    )
    .unwrap();
    let surface = ball.surface_slope.unwrap();
    let rel = (ball.fd_slope - surface).abs() / surface.abs();
    verdict(
        critical && rel <= 0.1,
        format!(
            "optimum slopes {:.2e} / {:.2e} vs off-center ball {nonopt:.4}; ball in square fd {:.5} vs surface {surface:.5} (rel {rel:.3})",
            opt[0], opt[1], ball.fd_slope
        ),
    )
}

fn gradient_check() -> Verdict {
    let g = build_grid(Shape::unit_square(), 16).unwrap();
    let (nt, horizon) = (8, 0.5);
    let dt = horizon / nt as f64;
    let v0 = Setup::v0(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 10);
    let slices: Vec<Potential> = (0..nt).map(|_| random_admissible(&g, v0, &mut rng)).collect();
    let traj = ControlTrajectory::new(&g, horizon, slices.clone()).unwrap();
    let y0 = gaussian(&g, (0.4, 0.6), 0.2);
    let states = forward_solve(&g, &traj, &y0).unwrap();
    let adj = adjoint_solve(&g, &traj, &ScalarField::constant(&g, 1.0)).unwrap();
    let grad = control_gradient(&states, &adj, dt).unwrap();
    let objective = |vals: &[Vec<f64>]| {
        let refs: Vec<&[f64]> = vals.iter().map(|v| v.as_slice()).collect();
        let ys = forward_states(&g, dt, &refs, y0.values()).unwrap();
        g.cell_area() * ys.last().unwrap().iter().sum::<f64>()
    };
    let base: Vec<Vec<f64>> = slices.iter().map(|s| s.values().to_vec()).collect();
    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (k, i) = (rng.gen_range(0..nt), rng.gen_range(0..g.len()));
        let (mut up, mut dn) = (base.clone(), base.clone());
        up[k][i] += eps;
        dn[k][i] -= eps;
        let fd = (objective(&up) - objective(&dn)) / (2.0 * eps);
        let a = g.cell_area() * grad[k].values()[i];
        worst = worst.max((fd - a).abs() / a.abs());
    }
    verdict(worst <= 1e-4, format!("max relative error {worst:.2e} over 20 probes"))
}

fn decay_law(s: &Setup) -> Verdict {
    let g = &s.disk;
    let vstar = &s.disk_reg.entries[0].potential;
    let y0 = y0_for(g);
    let per_unit = 64.0;
    let dt = 1.0 / per_unit;
    let horizons = [2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
    let logs: Vec<f64> = horizons
        .iter()
        .map(|&t| {
            let traj = ControlTrajectory::constant(g, t, (t * per_unit) as usize, vstar).unwrap();
            let ys = forward_solve(g, &traj, &y0).unwrap();
            (g.cell_area() * ys.last().unwrap().values().iter().sum::<f64>()).ln()
        })
        .collect();
    let slope = fit_slope(&horizons, &logs).unwrap();
    let rate = ((-slope * dt).exp() - 1.0) / dt;
    let lbar = s.disk_reg.lambda_bar;
    let rel = (rate - lbar).abs() / lbar;
    verdict(
        rel <= 0.01,
        format!("log-objective slope {slope:.6}, corrected rate {rate:.6} vs lambda_bar {lbar:.6} (rel {rel:.1e})"),
    )
}

fn gronwall(s: &Setup, sweeps: &[(&str, HorizonSweep)]) -> Verdict {
    let mut worst = f64::INFINITY;
    let mut pass = true;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 12);
    for (g, reg) in [(&s.disk, &s.disk_reg), (&s.square, &s.square_reg)] {
        let (horizon, nt) = (1.0, 32);
        let v0 = Setup::v0(g);
        let y0 = y0_for(g);
        for _ in 0..5 {
            let slices: Vec<Potential> = (0..nt).map(|_| random_admissible(g, v0, &mut rng)).collect();
            let traj = ControlTrajectory::new(g, horizon, slices).unwrap();
            let m = gronwall_check(g, &traj, &y0).unwrap().margin;
            pass &= m >= -3.0 * traj.dt() * reg.lambda_bar;
            worst = worst.min(m);
        }
    }
    let mut optimized = 0;
    for (name, sweep) in sweeps {
        let lbar = if *name == "disk" {
            s.disk_reg.lambda_bar
        } else {
            s.square_reg.lambda_bar
        };
        for r in &sweep.reports {
            let dt = r.horizon / r.nt as f64;
            pass &= r.gronwall.margin >= -3.0 * dt * lbar;
            worst = worst.min(r.gronwall.margin);
            optimized += 1;
        }
    }
    verdict(
        pass,
        format!("10 random and {optimized} optimized trajectories, smallest margin {worst:.4}"),
    )
}

fn integral_turnpike(sweeps: &[(&str, HorizonSweep)], secs: f64) -> Verdict {
    let mut pass = secs <= 3600.0;
    let mut parts = Vec::new();
    for (name, sweep) in sweeps {
        let ints: Vec<f64> = sweep.reports.iter().map(|r| r.turnpike_integral).collect();
        let complete = sweep.failures.is_empty() && ints.len() == 4;
        let ratio = ints[ints.len() - 1] / ints[ints.len() - 2];
        let slope = sweep.growth_slope.unwrap_or(f64::NAN);
        let above_static = sweep.reports.iter().all(|r| r.objective >= r.static_objective);
        pass &= complete && ratio <= 1.25 && slope <= 0.05 * ints[0] && above_static;
        parts.push(format!(
            "{name} integrals {:?}, ratio(8/4) {ratio:.4}, growth slope {slope:.2e}",
            ints.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>()
        ));
    }
    parts.push(format!("{secs:.0} s"));
    verdict(pass, parts.join("; "))
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

fn determinism() -> Verdict {
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-determinism");
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).unwrap();
    let config = root.join("config.json");
    fs::write(
        &config,
        r#"{
  "domain": {"kind": "disk", "radius": 1.0},
  "resolution": 24,
  "seed": 11,
  "optimizer": {"n_starts": 4},
  "stability": {"delta_fractions": [0.1, 0.2, 0.4], "n_per_delta": 8},
  "bathtub": {"delta_fractions": [0.05, 0.1, 0.2], "n_per_delta": 20},
  "control": {"t_list": [0.5, 1.0], "nt_per_unit": 16, "max_iter": 10,
              "y0": {"kind": "gaussian", "center": [0.35, 0.2], "width": 0.15}, "dump_stride": 4}
}"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for (k, workers) in [1, 2].iter().enumerate() {
        let dir = root.join(format!("run{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_stlab"))
            .arg("all")
            .arg("--config")
            .arg(&config)
            .arg("--output")
            .arg(&dir)
            .arg("--workers")
            .arg(workers.to_string())
            .output()
            .unwrap();
        if !status.status.success() {
            return verdict(false, format!("run {k} exited with {:?}", status.status.code()));
        }
        outputs.push(csv_bytes(&dir));
    }
    let same = outputs[0] == outputs[1];
    verdict(
        same && !outputs[0].is_empty(),
        format!("{} CSV files, identical = {same}", outputs[0].len()),
    )
}

fn main() {
    let started = Instant::now();
    let mut failed = 0;
    let mut report = |id: &str, title: &str, v: Verdict| {
        if !v.pass {
            failed += 1;
        }
        println!("[{}] {id} {title}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    };

    report("C1", "eigen solver", eigen_solver());
    report("C2", "shift identity", shift_identity());

    let disk = build_grid(Shape::disk(1.0), 64).unwrap();
    let square = build_grid(Shape::unit_square(), 64).unwrap();
    let setup = Setup {
        disk_reg: registry(&disk, 16),
        square_reg: registry(&square, 16),
        disk,
        square,
    };
    report("C3", "monotone descent", monotone_descent(&setup));
    report("C4", "radial ground truth", radial_ground_truth(&setup));
    report("C5", "bathtub optimality", bathtub_optimality());
    report("C6", "quantitative bathtub", quantitative_bathtub(&setup));
    report("C7", "quantitative spectral inequality", spectral_inequality(&setup));
    report("C8", "Hopf nondegeneracy", hopf_refinement(&setup));
    report("C9", "first-order shape criticality", shape_criticality(&setup));
    report("C10", "adjoint gradient", gradient_check());
    report("C11", "decay law", decay_law(&setup));

    let t = Instant::now();
    let sweeps: Vec<(&str, HorizonSweep)> = [
        ("disk", &setup.disk, &setup.disk_reg),
        ("square", &setup.square, &setup.square_reg),
    ]
    .into_iter()
    .map(|(name, g, reg)| {
        let sweep = horizon_sweep(g, reg, Setup::v0(g), &y0_for(g), &[1.0, 2.0, 4.0, 8.0], 64.0, 60, SEED).unwrap();
        (name, sweep)
    })
    .collect();
    let sweep_secs = t.elapsed().as_secs_f64();
    report("C12", "Gronwall bound", gronwall(&setup, &sweeps));
    report("C13", "integral turnpike", integral_turnpike(&sweeps, sweep_secs));
    report("C14", "determinism", determinism());

    println!(
        "acceptance: {} of 14 criteria passed in {:.0} s",
        14 - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
