//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by solvers, kernels and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure in {what}{}", iterations.map(|k| format!(" after {k} iterations")).unwrap_or_default())]
    NumericalFailure {
        what: String,
        iterations: Option<usize>,
    },

    #[error("matrix is not positive definite (pivot {pivot} failed)")]
    RankDeficient { pivot: usize },

    #[error("operator is not positive semidefinite: negative curvature encountered")]
    IndefiniteOperator,

    #[error("inner solver reached {achieved:.3e} but the requested tolerance is {required:.3e}")]
    ToleranceNotMet { achieved: f64, required: f64 },

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("problem size {dim} exceeds the dense cap {cap}")]
    SizeLimit { dim: usize, cap: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("misuse: {0}")]
    Misuse(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
