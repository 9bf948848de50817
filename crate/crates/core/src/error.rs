use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),

    #[error("indicator block {block} is not one-hot: {values:?}")]
    NotOneHot { block: usize, values: Vec<f64> },

    #[error("state space of {size} configurations exceeds the enumeration cap {cap}")]
    OracleTooLarge { size: f64, cap: u64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "eigensolver did not converge after {iterations} restarts (best residual {residual:.3e})"
    )]
    EigenNotConverged { iterations: usize, residual: f64 },

    #[error("eigendecomposition failed: {0}")]
    EigenFailed(String),

    #[error("diagnostics unavailable: {0}")]
    DiagnosticsUnavailable(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
