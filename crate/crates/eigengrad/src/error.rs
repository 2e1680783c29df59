//! Error types shared by the dense linear-algebra layer.

use thiserror::Error;

/// Errors raised by matrix construction, the eigensolver and text I/O.
#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("eigensolver failed to converge after {sweeps} sweeps (off-diagonal norm {off_norm})")]
    EigensolverFailure { sweeps: usize, off_norm: f64 },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
