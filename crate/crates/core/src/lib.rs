//! Optimal potentials for the principal eigenvalue of `-Delta - V` under
//! `0 <= V <= 1`, `int V = V0`, their quantitative stability, and the
//! integral turnpike of the bilinear heat control problem
//! `y' = Delta y + V(t) y`.
//!
//! Everything lives on a uniform lattice ([`grid`]) with the five-point
//! Dirichlet Laplacian. The main entry points are
//! [`optimizer::enumerate_optima`], [`stability::estimate_constant`] and
//! [`control::horizon_sweep`].
//!
//! ```
//! use spectral_turnpike::{build_grid, optimizer, Shape};
//!
//! let grid = build_grid(Shape::disk(1.0), 24)?;
//! let v0 = 0.3 * grid.measure();
//! let registry = optimizer::enumerate_optima(&grid, v0, 2, 7, 1e-6, 0.05 * grid.measure())?;
//! assert_eq!(registry.len(), 1);
//! assert!(registry.entries[0].hopf > 0.0);
//! # Ok::<(), spectral_turnpike::Error>(())
//! ```

// NaN must fail these checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bathtub;
pub mod control;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod optimizer;
pub mod rng;
pub mod spectral;
pub mod stability;

pub use error::{Error, Result};
pub use grid::{build_grid, GridDomain, Potential, ScalarField, Shape};
pub use optimizer::{OptimalSetRegistry, RegistryEntry};
pub use spectral::{principal_eigenpair, EigenPair};
