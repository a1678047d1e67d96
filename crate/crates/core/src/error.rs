//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had the wrong length for the operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// `backward` was called with no cached forward pass.
    #[error("backward called before forward")]
    BackwardBeforeForward,

    /// An argument was outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Configuration file or value problem; message names the offending key.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint serialization or validation failure.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A NaN or infinity appeared where finite math was required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
