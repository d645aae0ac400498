//! Error type shared by every module.

use thiserror::Error;

/// Errors raised by the simulator and its building blocks.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed malformed arguments (length or dimension mismatch, bad counts).
    #[error("invalid input: {0}")]
    Input(String),

    /// An experiment configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A documented contract (e.g. simplex weights) was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A binary file did not follow the expected layout.
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
