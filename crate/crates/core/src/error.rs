use std::path::PathBuf;

use crate::grid::AdmissibilityViolation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid angular quadrature: {0}")]
    InvalidQuadrature(String),

    #[error("phase anisotropy must satisfy |g| < 1, got {0}")]
    InvalidAnisotropy(f64),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("inadmissible coefficients: {0}")]
    Inadmissible(AdmissibilityViolation),

    #[error("source iteration did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid boundary source: {0}")]
    InvalidSource(String),

    #[error("invalid phantom: {0}")]
    InvalidPhantom(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed field file {path}: {reason}")]
    FieldFormat { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
