use thiserror::Error;

use crate::optimizer::DescentHistory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no lattice point lies strictly inside the shape")]
    EmptyInterior,

    #[error("interior is not 4-connected ({components} components)")]
    Disconnected { components: usize },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("field has zero norm")]
    ZeroField,

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("potential is not admissible: {0}")]
    NotAdmissible(String),

    #[error("eigen-solver did not converge in {max_iters} iterations (best residual {best_residual:e})")]
    NoConvergence { max_iters: usize, best_residual: f64 },

    #[error("principal eigenvalue appears degenerate (contraction factor {contraction:.12})")]
    Degenerate { contraction: f64 },

    #[error("principal eigenvector changes sign")]
    NonPositiveEigenvector,

    #[error("mass {mass} outside (0, {domain_measure})")]
    MassOutOfRange { mass: f64, domain_measure: f64 },

    #[error("L1 distance to the bathtub projection is zero")]
    DegenerateDistance,

    #[error("set has no interface cells")]
    EmptyBoundary,

    #[error("deformed set reaches the domain boundary")]
    DeformationEscapes,

    #[error("registry is empty")]
    EmptyRegistry,

    #[error("none of the {starts} optimizer starts converged")]
    AllRunsFailed { starts: usize },

    #[error("fixed-point iteration stopped after {} iterations without meeting the tolerance", .history.iterations)]
    OptimizerStalled { history: Box<DescentHistory> },

    #[error("shell of radius {delta} cannot be sampled: {reason}")]
    ShellInfeasible { delta: f64, reason: String },

    #[error("registry is not optimal: sampled gap {gap:e} below -tolerance")]
    InvalidRegistry { gap: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
