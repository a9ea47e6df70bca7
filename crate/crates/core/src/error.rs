use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("basis dimension {dim} exceeds the hard limit {limit}")]
    BasisLimit { dim: usize, limit: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("spectral parameter {0} outside the admissible half-plane")]
    OutsideHalfPlane(String),

    #[error("not converged: {0}")]
    NotConverged(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("matrix is singular")]
    Singular,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
