//! Crate-wide error type.
//!
//! Library functions return [`Error`] for contract violations (bad shapes,
//! invalid arguments, malformed files) and for numerical failures detected at
//! run time (non-finite losses). Panics are reserved for internal logic bugs.

use thiserror::Error;

/// Errors produced by auction, training, and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had a different shape than the operation requires.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numerical quantity left the finite range (NaN or infinity).
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// A checkpoint or config file could not be parsed.
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenient alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand constructor for dimension errors.
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// Shorthand constructor for invalid-argument errors.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
