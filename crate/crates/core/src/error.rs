use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThmmError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("all reestimation weights are zero")]
    ZeroWeights,

    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("model assigns zero probability to the observations")]
    ZeroLikelihood,

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl ThmmError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        ThmmError::InvalidInput(msg.into())
    }

    pub(crate) fn mismatch(msg: impl Into<String>) -> Self {
        ThmmError::DimensionMismatch(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, ThmmError>;
