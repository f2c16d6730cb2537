mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spectral_turnpike::bathtub::{bathtub_deficit, bathtub_projection, decreasing_rearrangement, level_threshold};
use spectral_turnpike::control::{
    adjoint_solve, forward_solve, gronwall_check, optimize_control, ControlOptions, ControlTrajectory,
};
use spectral_turnpike::optimizer::{enumerate_optima, optimize_potential, random_initialization};
use spectral_turnpike::rng::stream;
use spectral_turnpike::spectral::{eigenpair_for_values, DEFAULT_EIGEN_TOL};
use spectral_turnpike::stability::{dist_to_registry, estimate_constant, sample_shell};
use spectral_turnpike::{build_grid, GridDomain, OptimalSetRegistry, Potential, ScalarField, Shape};

use common::random_admissible;

fn square(n: usize) -> Arc<GridDomain> {
    build_grid(Shape::unit_square(), n).unwrap()
}

fn disk(n: usize) -> Arc<GridDomain> {
    build_grid(Shape::disk(1.0), n).unwrap()
}

fn field_from_seed(grid: &Arc<GridDomain>, seed: u64, levels: u32) -> ScalarField {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // coarse levels produce ties
    let vals = (0..grid.len())
        .map(|_| {
            if levels == 0 {
                rng.gen::<f64>()
            } else {
                rng.gen_range(0..levels) as f64 / levels as f64
            }
        })
        .collect();
    ScalarField::new(grid, vals).unwrap()
}

fn integral(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn level_set_masses_bracket_the_target(seed in any::<u64>(), levels in 0u32..6, frac in 0.02f64..0.98) {
        let g = square(12);
        let f = field_from_seed(&g, seed, levels);
        let v0 = frac * g.measure();
        let info = level_threshold(&f, v0).unwrap();
        let tol = 1e-12 * g.measure();
        prop_assert!(info.strict_mass <= v0 + tol);
        prop_assert!(v0 <= info.closed_mass + tol);
        prop_assert!((0.0..=1.0).contains(&info.fraction_on_level));
    }

    #[test]
    fn projection_beats_random_admissible(seed in any::<u64>(), levels in 0u32..6, frac in 0.05f64..0.95) {
        let g = square(10);
        let f = field_from_seed(&g, seed, levels);
        let v0 = frac * g.measure();
        let p = bathtub_projection(&f, v0).unwrap();
        prop_assert!((p.mass() - v0).abs() <= 1e-12 * g.measure());
        let best = integral(f.values(), p.values());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..20 {
            let w = random_admissible(&g, v0, &mut rng);
            prop_assert!(integral(f.values(), w.values()) <= best + 1e-10);
        }
    }

    #[test]
    fn projection_is_idempotent_and_gap_nonnegative(seed in any::<u64>(), levels in 0u32..6, frac in 0.05f64..0.95) {
        let g = disk(14);
        let f = field_from_seed(&g, seed, levels);
        let v0 = frac * g.measure();
        let p = bathtub_projection(&f, v0).unwrap();
        let pp = bathtub_projection(p.field(), v0).unwrap();
        let d: f64 = p.values().iter().zip(pp.values()).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!(d * g.cell_area() <= 1e-12 * g.measure());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_admissible(&g, v0, &mut rng);
        let def = bathtub_deficit(&f, &w, v0).unwrap();
        prop_assert!(def.gap >= -1e-12);
    }

    #[test]
    fn rearrangement_is_equimeasurable(seed in any::<u64>(), levels in 0u32..6, t in -0.1f64..1.1) {
        let g = disk(14);
        let f = field_from_seed(&g, seed, levels);
        let prof = decreasing_rearrangement(&f);
        let direct = f.values().iter().filter(|&&v| v > t).count() as f64 * g.cell_area();
        prop_assert!((prof.distribution(t) - direct).abs() <= 1e-12);
        let int_direct: f64 = f.values().iter().sum::<f64>() * g.cell_area();
        prop_assert!((prof.integral() - int_direct).abs() <= 1e-10);
    }

    #[test]
    fn deficit_ratio_ignores_added_constants(seed in any::<u64>(), c in -5.0f64..5.0, frac in 0.1f64..0.9) {
        let g = square(10);
        let f = field_from_seed(&g, seed, 0);
        let v0 = frac * g.measure();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.rotate_left(7));
        let w = random_admissible(&g, v0, &mut rng);
        let a = bathtub_deficit(&f, &w, v0).unwrap();
        let b = bathtub_deficit(&f.map(|x| x + c).unwrap(), &w, v0).unwrap();
        prop_assert!((a.gap - b.gap).abs() <= 1e-10 * (1.0 + c.abs()));
        prop_assert!((a.distance - b.distance).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn constant_shift_moves_eigenvalue(seed in any::<u64>(), c in 0.0f64..0.5) {
        use rand::Rng;
        let g = disk(16);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..g.len()).map(|_| rng.gen::<f64>() * 0.5).collect();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let a = eigenpair_for_values(&g, &v, DEFAULT_EIGEN_TOL, None).unwrap();
        let b = eigenpair_for_values(&g, &shifted, DEFAULT_EIGEN_TOL, None).unwrap();
        prop_assert!((b.lambda - (a.lambda - c)).abs() <= 1e-8);
        prop_assert!(a.lambda >= spectral_turnpike::spectral::dirichlet_ground_eigenvalue(&g).unwrap() - 1.0 - 1e-9);
    }

    #[test]
    fn descent_is_monotone_and_ends_bang_bang(seed in any::<u64>(), frac in 0.1f64..0.5) {
        let g = square(16);
        let v0 = frac * g.measure();
        let init = random_initialization(&g, v0, &mut stream(seed, "test/descent")).unwrap();
        let (v, e, hist) = optimize_potential(&g, v0, &init, 200, g.cell_area()).unwrap();
        prop_assert!(hist.is_monotone(1e-9));
        let lambda_d = spectral_turnpike::spectral::dirichlet_ground_eigenvalue(&g).unwrap();
        prop_assert!(e.lambda >= lambda_d - 1.0 - 1e-9);
        // at most one partially filled level, which holds at most one cell's worth of mass
        let partial = v.values().iter().filter(|&&x| x > 1e-12 && x < 1.0 - 1e-12).count();
        let partial_mass: f64 = v.values().iter().filter(|&&x| x > 1e-12 && x < 1.0 - 1e-12).sum();
        prop_assert!(partial == 0 || partial_mass < partial as f64);
        prop_assert!(e.u.values().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn shell_samples_sit_on_the_shell(seed in any::<u64>(), k in 2usize..40) {
        let g = disk(20);
        let v0 = 0.3 * g.measure();
        let reg = enumerate_optima(&g, v0, 1, 3, 1e-6, 0.05 * g.measure()).unwrap();
        let delta = k as f64 * g.cell_area();
        let shell = sample_shell(&reg, 0, delta, 4, seed).unwrap();
        for v in &shell {
            prop_assert!((v.mass() - v0).abs() <= 1e-12 * g.measure());
            prop_assert!((dist_to_registry(v, &reg).unwrap() - delta).abs() <= 1e-12 * g.measure());
        }
        let again = sample_shell(&reg, 0, delta, 4, seed).unwrap();
        for (a, b) in shell.iter().zip(&again) {
            prop_assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn states_stay_positive_and_adjoint_is_dual(seed in any::<u64>(), horizon in 0.1f64..2.0) {
        let g = square(10);
        let v0 = 0.25 * g.measure();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slices: Vec<Potential> = (0..6).map(|_| random_admissible(&g, v0, &mut rng)).collect();
        let traj = ControlTrajectory::new(&g, horizon, slices).unwrap();
        let y0 = ScalarField::from_fn(&g, |x, y| 0.1 + x * y).unwrap();
        let states = forward_solve(&g, &traj, &y0).unwrap();
        prop_assert!(states.iter().all(|s| s.values().iter().all(|&x| x > 0.0)));
        let terminal = ScalarField::from_fn(&g, |x, y| 1.0 + (3.0 * x).sin() * y).unwrap();
        let adj = adjoint_solve(&g, &traj, &terminal).unwrap();
        let lhs = integral(adj[0].values(), y0.values());
        let rhs = integral(terminal.values(), states.last().unwrap().values());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        let gw = gronwall_check(&g, &traj, &y0).unwrap();
        prop_assert!(gw.margin >= -1e-9);
    }

    #[test]
    fn frank_wolfe_objective_never_drops(horizon in 0.2f64..1.5, cx in 0.2f64..0.8) {
        let g = square(10);
        let v0 = 0.2 * g.measure();
        let y0 = ScalarField::from_fn(&g, |x, y| (-((x - cx).powi(2) + (y - 0.5).powi(2)) * 20.0).exp()).unwrap();
        let sol = optimize_control(&g, v0, horizon, 6, &y0, &ControlOptions { max_iter: 8, ..ControlOptions::default() }).unwrap();
        for w in sol.history.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-14 * w[0].abs());
        }
    }
}

fn reflect_x(g: &GridDomain, v: &[f64]) -> Vec<f64> {
    (0..g.len())
        .map(|c| {
            let (i, j) = g.lattice_coords(c);
            v[g.index_of(g.nx() - i, j).unwrap()]
        })
        .collect()
}

#[test]
fn descent_commutes_with_reflection() {
    let g = square(20);
    let v0 = 0.3 * g.measure();
    for seed in 0..4 {
        let init = random_initialization(&g, v0, &mut stream(seed, "test/reflect")).unwrap();
        let mirrored = Potential::from_values(&g, reflect_x(&g, init.values()), v0).unwrap();
        let (a, ea, _) = optimize_potential(&g, v0, &init, 300, g.cell_area()).unwrap();
        let (b, eb, _) = optimize_potential(&g, v0, &mirrored, 300, g.cell_area()).unwrap();
        let ra = reflect_x(&g, a.values());
        let d: f64 = ra.iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum::<f64>() * g.cell_area();
        assert!(
            d <= 2.0 * g.cell_area(),
            "seed {seed}: reflected optimum differs by {d}"
        );
        assert!((ea.lambda - eb.lambda).abs() <= 1e-8);
    }
}

#[test]
fn stability_report_is_reproducible() {
    let g = disk(20);
    let v0 = 0.3 * g.measure();
    let reg = enumerate_optima(&g, v0, 2, 11, 1e-6, 0.05 * g.measure()).unwrap();
    let deltas = [0.1 * v0, 0.2 * v0];
    let a = estimate_constant(&g, &reg, &deltas, 6, true, 5).unwrap();
    let b = estimate_constant(&g, &reg, &deltas, 6, true, 5).unwrap();
    assert_eq!(a.samples, b.samples);
    assert!(a.samples.iter().all(|s| s.gap >= -2e-9 && s.ratio.is_finite()));
    assert!(!a.invalid_registry);
    assert!(a.estimated_c > 0.0);
}

#[test]
fn corrupted_registry_is_flagged() {
    let g = disk(20);
    let v0 = 0.3 * g.measure();
    let reg = enumerate_optima(&g, v0, 1, 11, 1e-6, 0.05 * g.measure()).unwrap();
    // a half-disk is not optimal; registering it as the optimum must show up as negative gaps
    let off = bathtub_projection(&ScalarField::from_fn(&g, |x, _| x).unwrap(), v0).unwrap();
    let e = spectral_turnpike::principal_eigenpair(&g, &off, DEFAULT_EIGEN_TOL).unwrap();
    let entry = spectral_turnpike::RegistryEntry::analyze(off, e, 0.0).unwrap();
    assert!(entry.lambda > reg.lambda_bar);
    let corrupted = OptimalSetRegistry {
        lambda_bar: entry.lambda,
        entries: vec![entry],
        ..reg.clone()
    };
    let report = estimate_constant(&g, &corrupted, &[0.1 * v0], 6, true, 1).unwrap();
    assert!(report.invalid_registry);
    assert!(report.validate().is_err());
}
