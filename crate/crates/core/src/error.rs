//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any bettax module.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input data or configuration.
    #[error("{0}")]
    Validation(String),
    /// A numerical computation could not be carried out.
    #[error("{0}")]
    Computation(String),
    /// Input/output failure (CSV, JSON, filesystem).
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn computation(msg: impl Into<String>) -> Self {
        Error::Computation(msg.into())
    }

    /// True when the error stems from bad inputs rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
