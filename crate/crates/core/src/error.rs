//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by dataset handling, model construction and training.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (bad threshold ordering, nonpositive alpha, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Invalid or inconsistent data (manifest violations, undersized splits, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Tensor shape mismatch between what an operation expects and what it got.
    #[error("shape error: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    /// Numeric failure (non-finite loss, zero-norm embedding, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Checkpoint file is malformed or belongs to a different architecture.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Shape {
            expected: expected.into(),
            got: got.into(),
        }
    }
}
