use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("validation error at row {row}: {message}")]
    InvalidRow { row: usize, message: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate scenario: {0}")]
    Degenerate(String),
    #[error("prior calibration failed: {0}")]
    Calibration(String),
    #[error("overflow: {0}")]
    Overflow(String),
    #[error("non-finite likelihood at iteration {iteration}, tree {tree}")]
    NonFinite { iteration: usize, tree: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
