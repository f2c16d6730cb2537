//! Numerical check of the first variation of `lambda - Lambda * Vol`.
//!
//! A set is represented by a signed distance `psi` (negative inside). Moving
//! it along a field `Phi` for time `t` gives `psi_t(x) = psi(x - t Phi(x))`,
//! and the potential of the moved set is the ramp
//! `clamp(1/2 - psi_t / h, 0, 1)`, which varies continuously with `t`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{GridDomain, Potential};
use crate::spectral::eigenpair_for_values;

use super::RegistryEntry;

const SHAPE_EIGEN_TOL: f64 = 1e-10;
const SURFACE_NODES: usize = 2048;

/// Compactly supported deformation fields. The profile is
/// `b(r) = (1 - (r/support)^2)^2` for `r < support` and 0 beyond.
#[derive(Clone, Debug, PartialEq)]
pub enum DeformationField {
    /// `Phi(x) = b(|x - c|) (x - c)`.
    RadialBump { center: (f64, f64), support: f64 },
    /// `Phi(x) = b(|x - c|) d`.
    Translation {
        center: (f64, f64),
        support: f64,
        direction: (f64, f64),
    },
    /// `Phi(x) = b(|x - c|) (x - c)^perp`, tangent to circles around `c`.
    Rotation { center: (f64, f64), support: f64 },
}

fn profile(r: f64, support: f64) -> f64 {
    let s = r / support;
    if s >= 1.0 {
        0.0
    } else {
        (1.0 - s * s).powi(2)
    }
}

impl DeformationField {
    pub fn at(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            DeformationField::RadialBump { center, support } => {
                let (dx, dy) = (x - center.0, y - center.1);
                let b = profile(dx.hypot(dy), support);
                (b * dx, b * dy)
            }
            DeformationField::Translation {
                center,
                support,
                direction,
            } => {
                let b = profile((x - center.0).hypot(y - center.1), support);
                (b * direction.0, b * direction.1)
            }
            DeformationField::Rotation { center, support } => {
                let (dx, dy) = (x - center.0, y - center.1);
                let b = profile(dx.hypot(dy), support);
                (-b * dy, b * dx)
            }
        }
    }

    /// Largest `|Phi|` over the plane (closed form for each profile).
    pub fn max_norm(&self) -> f64 {
        match *self {
            // r (1 - r^2/R^2)^2 peaks at r = R / sqrt(5)
            DeformationField::RadialBump { support, .. } | DeformationField::Rotation { support, .. } => {
                let r = support / 5f64.sqrt();
                r * profile(r, support)
            }
            DeformationField::Translation { direction, .. } => direction.0.hypot(direction.1),
        }
    }
}

/// Set to be deformed.
#[derive(Clone, Copy, Debug)]
pub enum ShapeBase<'a> {
    /// The set `{V >= 1/2}` of a potential.
    Indicator(&'a Potential),
    /// Euclidean ball; its signed distance is used exactly.
    Ball { center: (f64, f64), radius: f64 },
}

#[derive(Clone, Debug)]
pub struct ShapeCheckReport {
    pub t_values: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub volumes: Vec<f64>,
    /// `lambda(E_t) - Lambda * Vol(E_t)` per `t`.
    pub lagrangian: Vec<f64>,
    pub base_lambda: f64,
    pub base_volume: f64,
    pub multiplier: f64,
    /// Least-squares slope of the Lagrangian through `t = 0`.
    pub fd_slope: f64,
    /// `h^2 sum (-u^2 - Lambda) dV/dt`, fitted in `t` like the Lagrangian.
    pub hadamard_slope: f64,
    /// `int_{boundary} (-u^2 - Lambda) Phi . nu` (ball bases only).
    pub surface_slope: Option<f64>,
}

enum Distance {
    Lattice { values: Vec<f64>, nx: usize, ny: usize },
    Ball { center: (f64, f64), radius: f64 },
}

impl Distance {
    fn eval(&self, grid: &GridDomain, x: f64, y: f64) -> f64 {
        match self {
            Distance::Ball { center, radius } => (x - center.0).hypot(y - center.1) - radius,
            Distance::Lattice { values, nx, ny } => {
                let (ox, oy) = grid.origin();
                let h = grid.h();
                let fx = ((x - ox) / h).clamp(0.0, *nx as f64);
                let fy = ((y - oy) / h).clamp(0.0, *ny as f64);
                let i0 = (fx.floor() as usize).min(nx - 1);
                let j0 = (fy.floor() as usize).min(ny - 1);
                let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
                let at = |i: usize, j: usize| values[j * (nx + 1) + i];
                (1.0 - ty) * ((1.0 - tx) * at(i0, j0) + tx * at(i0 + 1, j0))
                    + ty * ((1.0 - tx) * at(i0, j0 + 1) + tx * at(i0 + 1, j0 + 1))
            }
        }
    }
}

/// Signed distance on the whole bounding lattice from the interface cells of
/// `{V >= 1/2}`, offset by `h/2` so the zero level sits between cells.
fn lattice_distance(grid: &GridDomain, v: &[f64]) -> Result<Distance> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let inside = |c: usize| v[c] >= 0.5;
    let mut inner = Vec::new();
    let mut outer = Vec::new();
    for c in 0..grid.len() {
        let ns = grid.neighbors(c);
        if inside(c) {
            if ns.iter().any(|n| n.is_none_or(|n| !inside(n))) {
                inner.push(grid.position(c));
            }
        } else if ns.iter().flatten().any(|&n| inside(n)) {
            outer.push(grid.position(c));
        }
    }
    if inner.is_empty() || outer.is_empty() {
        return Err(Error::EmptyBoundary);
    }
    let nearest = |pts: &[(f64, f64)], x: f64, y: f64| {
        pts.iter()
            .map(|p| (p.0 - x).powi(2) + (p.1 - y).powi(2))
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    };
    let h = grid.h();
    let mut values = vec![0.0; (nx + 1) * (ny + 1)];
    for j in 0..=ny {
        for i in 0..=nx {
            let (x, y) = grid.lattice_position(i, j);
            let is_in = grid.index_of(i, j).is_some_and(inside);
            values[j * (nx + 1) + i] = if is_in {
                -(nearest(&outer, x, y) - 0.5 * h)
            } else {
                nearest(&inner, x, y) - 0.5 * h
            };
        }
    }
    Ok(Distance::Lattice { values, nx, ny })
}

fn deformed(grid: &GridDomain, dist: &Distance, phi: &DeformationField, t: f64) -> Result<Vec<f64>> {
    let h = grid.h();
    let mut v = vec![0.0; grid.len()];
    for (c, vc) in v.iter_mut().enumerate() {
        let (x, y) = grid.position(c);
        let (px, py) = phi.at(x, y);
        let psi = dist.eval(grid, x - t * px, y - t * py);
        *vc = (0.5 - psi / h).clamp(0.0, 1.0);
        if *vc > 0.0 && grid.touches_boundary(c) {
            return Err(Error::DeformationEscapes);
        }
    }
    Ok(v)
}

/// Check at an optimum, using its own multiplier.
pub fn shape_derivative_check(
    grid: &Arc<GridDomain>,
    entry: &RegistryEntry,
    phi: &DeformationField,
    t_values: &[f64],
) -> Result<ShapeCheckReport> {
    shape_derivative_check_base(
        grid,
        ShapeBase::Indicator(&entry.potential),
        entry.multiplier,
        phi,
        t_values,
    )
}

/// Deforms `base` along `phi` for every `t` in `t_values` and compares the
/// slope of `lambda(E_t) - multiplier * Vol(E_t)` at `t = 0` with the volume
/// and surface forms of the first variation.
pub fn shape_derivative_check_base(
    grid: &Arc<GridDomain>,
    base: ShapeBase<'_>,
    multiplier: f64,
    phi: &DeformationField,
    t_values: &[f64],
) -> Result<ShapeCheckReport> {
    if t_values.is_empty() || t_values.iter().any(|t| !t.is_finite() || *t == 0.0) {
        return Err(Error::InvalidArgument("t values must be finite and nonzero".into()));
    }
    let dist = match base {
        ShapeBase::Indicator(p) => {
            grid.ensure_same(p.grid())?;
            lattice_distance(grid, p.values())?
        }
        ShapeBase::Ball { center, radius } => {
            if !(radius > 0.0) {
                return Err(Error::InvalidArgument(format!("ball radius {radius}")));
            }
            Distance::Ball { center, radius }
        }
    };
    let a = grid.cell_area();
    let v_base = deformed(grid, &dist, phi, 0.0)?;
    let e0 = eigenpair_for_values(grid, &v_base, SHAPE_EIGEN_TOL, None)?;
    let base_volume = a * v_base.iter().sum::<f64>();
    let base_l = e0.lambda - multiplier * base_volume;

    let mut lambdas = Vec::with_capacity(t_values.len());
    let mut volumes = Vec::with_capacity(t_values.len());
    let mut lagrangian = Vec::with_capacity(t_values.len());
    let mut potentials = Vec::with_capacity(t_values.len());
    for &t in t_values {
        let v = deformed(grid, &dist, phi, t)?;
        let e = eigenpair_for_values(grid, &v, SHAPE_EIGEN_TOL, Some(e0.u.values()))?;
        let vol = a * v.iter().sum::<f64>();
        lambdas.push(e.lambda);
        volumes.push(vol);
        lagrangian.push(e.lambda - multiplier * vol);
        potentials.push(v);
    }

    let (stt, slt) = t_values
        .iter()
        .zip(&lagrangian)
        .fold((0.0, 0.0), |(s, l), (t, lt)| (s + t * t, l + t * (lt - base_l)));
    let fd_slope = slt / stt;

    // volume form, fitted in t like the Lagrangian
    let u = e0.u.values();
    let weight: Vec<f64> = u.iter().map(|x| -x * x - multiplier).collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, &t) in t_values.iter().enumerate() {
        let dv: f64 = weight
            .iter()
            .zip(&potentials[k])
            .zip(&v_base)
            .map(|((w, vt), vb)| w * (vt - vb))
            .sum();
        num += t * a * dv;
        den += t * t;
    }
    let hadamard_slope = num / den;

    let surface_slope = match base {
        ShapeBase::Ball { center, radius } => {
            let dtheta = 2.0 * PI / SURFACE_NODES as f64;
            let s: f64 = (0..SURFACE_NODES)
                .map(|k| {
                    let th = (k as f64 + 0.5) * dtheta;
                    let (nx, ny) = (th.cos(), th.sin());
                    let (x, y) = (center.0 + radius * nx, center.1 + radius * ny);
                    let ux = grid.interpolate(u, x, y);
                    let (px, py) = phi.at(x, y);
                    (-ux * ux - multiplier) * (px * nx + py * ny)
                })
                .sum();
            Some(s * radius * dtheta)
        }
        ShapeBase::Indicator(_) => None,
    };

    Ok(ShapeCheckReport {
        t_values: t_values.to_vec(),
        lambdas,
        volumes,
        lagrangian,
        base_lambda: e0.lambda,
        base_volume,
        multiplier,
        fd_slope,
        hadamard_slope,
        surface_slope,
    })
}
