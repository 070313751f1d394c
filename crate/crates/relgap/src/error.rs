use thiserror::Error;

/// Errors produced by construction, solving, parsing and training routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("zero-probability action at state {state}, action {action}: entropy term undefined")]
    ZeroProbabilityAction { state: usize, action: usize },

    #[error("singular linear system in {0}")]
    SingularSystem(&'static str),

    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
