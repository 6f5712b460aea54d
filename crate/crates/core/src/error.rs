use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum SglmmError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported parameter: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("rank deficient: wanted {wanted} directions, only {available} usable")]
    RankDeficient { wanted: usize, available: usize },

    #[error("degenerate chain: {0}")]
    DegenerateChain(String),

    #[error("all importance weights underflow (max log-weight {max_log_weight})")]
    WeightUnderflow { max_log_weight: f64 },

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("information matrix is not positive definite (eigenvalue {eigenvalue:e})")]
    Indefinite { eigenvalue: f64 },

    #[error("bootstrap failed: {dropped} of {total} replicates dropped")]
    Bootstrap { dropped: usize, total: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SglmmError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(SglmmError::InvalidInput(msg.into()))
}
