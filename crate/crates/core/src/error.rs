//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by covariance algebra, likelihood evaluation and training.
#[derive(Debug, Error)]
pub enum FvError {
    /// A per-pixel covariance matrix failed a positive-definiteness check.
    #[error("matrix not positive definite (pixel {pixel}, pivot {pivot:.3e})")]
    NonPositiveDefinite { pixel: usize, pivot: f64 },

    /// An argument was outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Tensor or batch shapes do not agree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An operation received an empty batch or vector.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A computation produced NaN or infinity.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// File i/o failure while reading or writing artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed config, checkpoint or dataset file.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, FvError>;
