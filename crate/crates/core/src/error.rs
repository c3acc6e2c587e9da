use thiserror::Error;

/// Errors raised by estimation, selection and I/O routines.
#[derive(Debug, Error)]
pub enum MixError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("no informative regularization grid: {0}")]
    NoInformativeGrid(String),

    #[error("model collection is empty: {0}")]
    EmptyCollection(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MixError>;
