use thiserror::Error;

use crate::model::Violation;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is indefinite (smallest eigenvalue {min_eigenvalue:.3e})")]
    IndefiniteMatrix { min_eigenvalue: f64 },

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite state encountered at grid index {index}")]
    NonFiniteState { index: usize },

    #[error("grid mismatch: expected {expected} values, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("time {t} is outside the horizon [{t0}, {t_end}]")]
    OutOfHorizon { t: f64, t0: f64, t_end: f64 },

    #[error("time {t} is not a grid point (nearest {nearest})")]
    OffGrid { t: f64, nearest: f64 },

    #[error("fundamental matrix is numerically singular (condition number {condition:.3e})")]
    SingularFundamental { condition: f64 },

    #[error("Hamiltonian block is ill-conditioned (condition number {condition:.3e})")]
    IllConditionedBlock { condition: f64 },

    #[error("boundary value recovery is ill-conditioned (condition number {condition:.3e})")]
    SingularRecovery { condition: f64 },

    #[error("weighted projection failed: {0}")]
    ProjectionFailure(String),

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("element has no representative; build it from controls or a kernel section")]
    MissingRepresentative,

    #[error("need at least {required} paths, got {got}")]
    InsufficientPaths { required: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("model is invalid: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.message.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
