//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CpAprError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index out of bounds: {0}")]
    OutOfBounds(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// The model evaluates to zero at a positive count while the minimum
    /// divisor is zero, so the multiplicative update is undefined.
    #[error("zero model value under positive count at index {index:?} (epsilon = 0)")]
    Singularity { index: Vec<usize> },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CpAprError>;
