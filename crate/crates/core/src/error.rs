use std::path::PathBuf;

use haptic_autograd::AutogradError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("ordering error at row {row}: timestamp {timestamp} does not increase")]
    Ordering { row: usize, timestamp: f64 },
    #[error("trace has no samples")]
    EmptyTrace,
    #[error("sequence too short: need at least {needed} rows, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("group {group}: need {needed} samples, have {available}")]
    Insufficient {
        group: String,
        needed: usize,
        available: usize,
    },
    #[error("dataset coverage: {0}")]
    Coverage(String),
    #[error("duplicate entry {0}")]
    Duplicate(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Autograd(#[from] AutogradError),
}

impl Error {
    /// Wrap with the path of the file that produced the error.
    pub fn at(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by invalid parameters rather than invalid data.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::File { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
