//! Principal Dirichlet eigenpair of `-Delta_h - V`.
//!
//! The solver is shifted inverse iteration. For `0 <= V <= 1` the principal
//! eigenvalue lies in `[lambda_D - 1, lambda_D]`, where `lambda_D` is the
//! ground Dirichlet eigenvalue of the grid, so the shift `lambda_D - 2` keeps
//! the shifted operator positive definite with smallest eigenvalue at least
//! one. Each outer step solves with a banded Cholesky factor of the shifted
//! operator.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{dot, inner_values, neg_laplacian_into, GridDomain, Potential, ScalarField};
use crate::linalg::BandedCholesky;

/// Default bound on the `h^2`-weighted eigen-residual.
pub const DEFAULT_EIGEN_TOL: f64 = 1e-9;

const MAX_ITERS: usize = 2000;
const DIRICHLET_TOL: f64 = 1e-10;

/// Principal eigenvalue `lambda(V)` with its positive, `L^2`-normalized
/// eigenfunction.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub lambda: f64,
    pub u: ScalarField,
    /// `|(-Delta_h - V) u - lambda u|`, `h^2`-weighted.
    pub residual: f64,
    pub iterations: usize,
}

/// Principal eigenpair of `-Delta_h - V`, iterated until the residual is at
/// most `tol`.
pub fn principal_eigenpair(grid: &Arc<GridDomain>, v: &Potential, tol: f64) -> Result<EigenPair> {
    principal_eigenpair_from(grid, v, tol, None)
}

/// As [`principal_eigenpair`], starting from `guess` (typically the
/// eigenfunction of a nearby potential).
pub fn principal_eigenpair_from(
    grid: &Arc<GridDomain>,
    v: &Potential,
    tol: f64,
    guess: Option<&ScalarField>,
) -> Result<EigenPair> {
    grid.ensure_same(v.grid())?;
    if let Some(g) = guess {
        grid.ensure_same(g.grid())?;
    }
    eigenpair_for_values(grid, v.values(), tol, guess.map(|g| g.values()))
}

/// Eigenpair for an arbitrary potential with values in `[0, 1]` (no mass
/// constraint).
pub fn eigenpair_for_values(grid: &Arc<GridDomain>, v: &[f64], tol: f64, guess: Option<&[f64]>) -> Result<EigenPair> {
    if v.len() != grid.len() {
        return Err(Error::LengthMismatch(format!(
            "{} potential values for {} cells",
            v.len(),
            grid.len()
        )));
    }
    if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::InvalidArgument("potential values must lie in [0, 1]".into()));
    }
    let shift = dirichlet_ground_eigenvalue(grid)? - 2.0;
    inverse_iteration(grid, v, shift, tol, guess)
}

/// Ground eigenvalue of `-Delta_h` on the grid (cached per grid).
pub fn dirichlet_ground_eigenvalue(grid: &Arc<GridDomain>) -> Result<f64> {
    if let Some(&l) = grid.dirichlet.get() {
        return Ok(l);
    }
    let zero = vec![0.0; grid.len()];
    let pair = inverse_iteration(grid, &zero, 0.0, DIRICHLET_TOL, None)?;
    let _ = grid.dirichlet.set(pair.lambda);
    Ok(pair.lambda)
}

fn inverse_iteration(
    grid: &Arc<GridDomain>,
    v: &[f64],
    shift: f64,
    tol: f64,
    guess: Option<&[f64]>,
) -> Result<EigenPair> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let n = grid.len();
    let diag: Vec<f64> = v.iter().map(|&x| -x - shift).collect();
    let factor = BandedCholesky::factor(grid, 1.0, &diag)?;

    let mut x: Vec<f64> = match guess {
        Some(g) if g.len() == n && g.iter().any(|&a| a != 0.0) => g.to_vec(),
        _ => vec![1.0; n],
    };
    normalize(grid, &mut x)?;

    let mut lx = vec![0.0; n];
    let mut best = f64::INFINITY;
    let mut prev = f64::INFINITY;
    let mut slow_steps = 0;
    for it in 1..=MAX_ITERS {
        factor.solve_in_place(&mut x);
        normalize(grid, &mut x)?;
        neg_laplacian_into(grid, &x, &mut lx);
        for i in 0..n {
            lx[i] -= v[i] * x[i];
        }
        let rho = inner_values(grid, &lx, &x);
        let residual = (grid.cell_area() * lx.iter().zip(&x).map(|(a, b)| (a - rho * b).powi(2)).sum::<f64>()).sqrt();
        best = best.min(residual);
        if residual <= tol {
            if x.iter().sum::<f64>() < 0.0 {
                x.iter_mut().for_each(|a| *a = -*a);
            }
            if x.iter().any(|&a| a <= 0.0) {
                return Err(Error::NonPositiveEigenvector);
            }
            return Ok(EigenPair {
                lambda: rho,
                u: ScalarField::from_vec_unchecked(grid, x),
                residual,
                iterations: it,
            });
        }
        let contraction = residual / prev;
        if contraction > 1.0 - 1e-8 && residual > 1e3 * tol {
            slow_steps += 1;
            if slow_steps >= 5 {
                return Err(Error::Degenerate { contraction });
            }
        } else {
            slow_steps = 0;
        }
        prev = residual;
    }
    Err(Error::NoConvergence {
        max_iters: MAX_ITERS,
        best_residual: best,
    })
}

fn normalize(grid: &GridDomain, x: &mut [f64]) -> Result<()> {
    let norm = (grid.cell_area() * dot(x, x)).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::ZeroField);
    }
    x.iter_mut().for_each(|a| *a /= norm);
    Ok(())
}

/// `(<-Delta_h u, u> - <V u, u>) / <u, u>`.
pub fn rayleigh_quotient(grid: &GridDomain, u: &ScalarField, v: &Potential) -> Result<f64> {
    grid.ensure_same(u.grid())?;
    grid.ensure_same(v.grid())?;
    rayleigh_values(grid, u.values(), v.values())
}

pub(crate) fn rayleigh_values(grid: &GridDomain, u: &[f64], v: &[f64]) -> Result<f64> {
    let uu = dot(u, u);
    if uu == 0.0 {
        return Err(Error::ZeroField);
    }
    let mut lu = vec![0.0; u.len()];
    neg_laplacian_into(grid, u, &mut lu);
    let num: f64 = lu.iter().zip(u).zip(v).map(|((l, a), w)| (l - w * a) * a).sum();
    Ok(num / uu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Shape};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn unit_square_matches_discrete_closed_form() {
        let n = 32;
        let g = build_grid(Shape::unit_square(), n).unwrap();
        let h = g.h();
        let exact = 2.0 * (4.0 / (h * h)) * (PI * h / 2.0).sin().powi(2);
        let l = dirichlet_ground_eigenvalue(&g).unwrap();
        assert_relative_eq!(l, exact, max_relative = 1e-12);
    }

    #[test]
    fn rectangle_two_by_one() {
        let g = build_grid(Shape::rectangle(2.0, 1.0), 64).unwrap();
        let l = dirichlet_ground_eigenvalue(&g).unwrap();
        let exact = 5.0 * PI * PI / 4.0;
        assert!((l - exact).abs() / exact < 0.01);
    }

    #[test]
    fn constant_potential_shifts_spectrum() {
        let g = build_grid(Shape::disk(1.0), 24).unwrap();
        let l0 = dirichlet_ground_eigenvalue(&g).unwrap();
        let c = 0.37;
        let v = Potential::uniform(&g, c * g.measure()).unwrap();
        let e = principal_eigenpair(&g, &v, DEFAULT_EIGEN_TOL).unwrap();
        assert_relative_eq!(e.lambda, l0 - c, epsilon = 1e-10);
    }

    #[test]
    fn eigenpair_invariants() {
        let g = build_grid(Shape::unit_square(), 20).unwrap();
        let vals: Vec<f64> = (0..g.len())
            .map(|c| {
                let (x, y) = g.position(c);
                if x < 0.5 && y < 0.6 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let mass = g.cell_area() * vals.iter().sum::<f64>();
        let v = Potential::from_values(&g, vals, mass).unwrap();
        let e = principal_eigenpair(&g, &v, DEFAULT_EIGEN_TOL).unwrap();
        assert!(e.residual <= DEFAULT_EIGEN_TOL);
        assert!(e.u.values().iter().all(|&a| a > 0.0));
        let norm = g.cell_area() * e.u.values().iter().map(|a| a * a).sum::<f64>();
        assert!((norm - 1.0).abs() < 1e-10);
        let rq = rayleigh_quotient(&g, &e.u, &v).unwrap();
        assert_relative_eq!(rq, e.lambda, epsilon = 1e-9);
        let ld = dirichlet_ground_eigenvalue(&g).unwrap();
        assert!(e.lambda <= ld && e.lambda >= ld - 1.0);
    }

    #[test]
    fn full_potential_attains_lower_bound() {
        let g = build_grid(Shape::unit_square(), 16).unwrap();
        let ones = vec![1.0; g.len()];
        let e = eigenpair_for_values(&g, &ones, DEFAULT_EIGEN_TOL, None).unwrap();
        assert_relative_eq!(
            e.lambda,
            dirichlet_ground_eigenvalue(&g).unwrap() - 1.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn warm_start_converges_quickly() {
        let g = build_grid(Shape::disk(1.0), 32).unwrap();
        let v = Potential::uniform(&g, 0.2 * g.measure()).unwrap();
        let cold = principal_eigenpair(&g, &v, 1e-10).unwrap();
        let warm = principal_eigenpair_from(&g, &v, 1e-10, Some(&cold.u)).unwrap();
        assert!(warm.iterations <= 2);
        assert_relative_eq!(warm.lambda, cold.lambda, epsilon = 1e-12);
    }

    #[test]
    fn rayleigh_properties() {
        let g = build_grid(Shape::unit_square(), 12).unwrap();
        let zero_pot = Potential::uniform(&g, 1e-9 * g.measure()).unwrap();
        let u = ScalarField::from_fn(&g, |x, y| x * (1.0 - y) + 0.1).unwrap();
        let r1 = rayleigh_quotient(&g, &u, &zero_pot).unwrap();
        let u2 = u.map(|a| 2.0 * a).unwrap();
        assert_relative_eq!(rayleigh_quotient(&g, &u2, &zero_pot).unwrap(), r1, max_relative = 1e-14);
        assert!(r1 >= dirichlet_ground_eigenvalue(&g).unwrap() - 1e-8);
        assert!(matches!(
            rayleigh_quotient(&g, &ScalarField::zeros(&g), &zero_pot),
            Err(Error::ZeroField)
        ));
    }
}
