//! Sparse kernels for operators of the form `a * (-Delta_h) + diag(d)`.

use crate::error::{Error, Result};
use crate::grid::{dot, GridDomain};

/// Cholesky factor of `a * (-Delta_h) + diag(d)` in band storage.
///
/// Row `i` stores columns `i - b ..= i` where `b` is the grid's half
/// bandwidth, so factoring costs `O(n b^2)` and a solve `O(n b)`.
pub struct BandedCholesky {
    n: usize,
    b: usize,
    data: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(grid: &GridDomain, laplacian_scale: f64, diag: &[f64]) -> Result<Self> {
        let n = grid.len();
        assert_eq!(diag.len(), n);
        let b = grid.half_bandwidth();
        let w = b + 1;
        let inv_h2 = laplacian_scale / grid.cell_area();
        let mut data = vec![0.0; n * w];
        for i in 0..n {
            let row = &mut data[i * w..(i + 1) * w];
            row[b] = 4.0 * inv_h2 + diag[i];
            for n_idx in grid.neighbors(i).into_iter().flatten() {
                if n_idx < i {
                    row[n_idx + b - i] = -inv_h2;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(b);
            let (before, rest) = data.split_at_mut(i * w);
            let row_i = &mut rest[..w];
            for j in lo..i {
                let row_j = &before[j * w..(j + 1) * w];
                let s = row_i[j + b - i] - dot(&row_i[lo + b - i..j + b - i], &row_j[lo + b - j..b]);
                row_i[j + b - i] = s / row_j[b];
            }
            let s = row_i[b] - dot(&row_i[lo + b - i..b], &row_i[lo + b - i..b]);
            if !(s > 0.0) {
                return Err(Error::LinearSolveFailure(format!(
                    "matrix is not positive definite (pivot {s:e} at row {i})"
                )));
            }
            row_i[b] = s.sqrt();
        }
        Ok(BandedCholesky { n, b, data })
    }

    /// Overwrites `x` with `A^{-1} x`.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, b, w) = (self.n, self.b, self.b + 1);
        debug_assert_eq!(x.len(), n);
        for i in 0..n {
            let lo = i.saturating_sub(b);
            let row = &self.data[i * w..(i + 1) * w];
            let s = x[i] - dot(&row[lo + b - i..b], &x[lo..i]);
            x[i] = s / row[b];
        }
        for i in (0..n).rev() {
            let lo = i.saturating_sub(b);
            let row = &self.data[i * w..(i + 1) * w];
            let xi = x[i] / row[b];
            x[i] = xi;
            for (xk, l) in x[lo..i].iter_mut().zip(&row[lo + b - i..b]) {
                *xk -= l * xi;
            }
        }
    }
}

/// `out = a * (-Delta_h) x + d .* x` without weights.
pub fn apply_shifted(grid: &GridDomain, laplacian_scale: f64, diag: &[f64], x: &[f64], out: &mut [f64]) {
    let inv_h2 = laplacian_scale / grid.cell_area();
    for (c, ns) in grid.raw_neighbors().iter().enumerate() {
        let mut s = 4.0 * x[c];
        for &n in ns {
            if n != u32::MAX {
                s -= x[n as usize];
            }
        }
        out[c] = s * inv_h2 + diag[c] * x[c];
    }
}

/// Conjugate gradients for a symmetric positive definite operator.
///
/// `x` holds the initial guess on entry. Stops when the residual norm falls
/// below `rel_tol * |rhs|`. Returns the iteration count.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    rhs: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = rhs.len();
    let rhs_norm = dot(rhs, rhs).sqrt();
    if rhs_norm == 0.0 {
        x.fill(0.0);
        return Ok(0);
    }
    let target = rel_tol * rhs_norm;
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(rhs) {
        *ri = bi - *ri;
    }
    let mut rr = dot(&r, &r);
    if rr.sqrt() <= target {
        return Ok(0);
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolveFailure(format!(
                "operator is not positive definite (p'Ap = {pap:e})"
            )));
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= target {
            return Ok(it);
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolveFailure(format!(
        "conjugate gradients stalled after {max_iter} iterations (residual {:e}, target {target:e})",
        rr.sqrt()
    )))
}
