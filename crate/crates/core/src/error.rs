use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("covariance is not positive semidefinite: eigenvalue {eigenvalue:e} below tolerance {tolerance:e}")]
    NotPsd { eigenvalue: f64, tolerance: f64 },

    #[error(
        "refusing to enumerate 2^{n} configurations (cap is {cap} spins); \
         use the Monte Carlo estimator or raise BABYLON_ENUM_CAP"
    )]
    CapExceeded { n: usize, cap: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
