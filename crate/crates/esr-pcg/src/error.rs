use thiserror::Error;

/// Errors surfaced by the solver, the planner and the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("solver breakdown: {0}")]
    Breakdown(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unrecoverable node failure: {0}")]
    Unrecoverable(String),

    #[error("state reconstruction failed: {0}")]
    Recovery(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
