use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum DibError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("batch too small: {0}")]
    BatchSize(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("modelling assumption violated: {0}")]
    Assumption(String),

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("insufficient sample: {0}")]
    InsufficientSample(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DibError>;
