use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RebaError>;

#[derive(Debug, Error)]
pub enum RebaError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    /// Malformed container bytes or JSON documents.
    #[error("format error: {0}")]
    Format(String),

    /// A contract or invariant violation on otherwise well-formed data.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// Zero-norm input where a direction is required.
    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    /// Zero variance where a correlation is required.
    #[error("degenerate statistics: {0}")]
    DegenerateStatistics(String),
}

impl RebaError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        RebaError::Validation(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        RebaError::Format(msg.into())
    }
}

impl From<serde_json::Error> for RebaError {
    fn from(err: serde_json::Error) -> Self {
        if err.is_io() {
            RebaError::Io(err.into())
        } else {
            RebaError::Format(err.to_string())
        }
    }
}
