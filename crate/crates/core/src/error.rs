//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or mismatched problem dimensions.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input file (NNet or JSON network, spec file, ...).
    #[error("parse error: {0}")]
    Parse(String),

    /// A probability or special-function evaluation left the representable
    /// range; the caller should treat the region as negligible.
    #[error("numeric underflow: {0}")]
    NumericUnderflow(String),

    /// An internal invariant was violated; indicates a bug, not bad input.
    #[error("internal consistency error: {0}")]
    Internal(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    /// Dimension mismatch helper; these are configuration errors.
    pub fn dim(context: &str, expected: usize, actual: usize) -> Self {
        Error::Config(format!(
            "{context}: expected dimension {expected}, got {actual}"
        ))
    }
}
