//! Error type shared by all core modules.

use alloc::string::String;
use core::fmt;

/// Failure modes of the numeric kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Shape mismatch between operands.
    Dim(String),
    /// Invalid numeric input (non-finite values, out-of-range scalars).
    Value(String),
    /// Invalid configuration (bad fractions, patterns, method choices).
    Config(String),
    /// Factorization or solve failed; carries the offending column and pivot.
    Numerical { detail: String, column: usize, pivot: f64 },
    /// Calibration pool has too little content for the requested sample.
    PoolTooSmall { needed: usize, available: usize },
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }

    pub fn value(msg: impl Into<String>) -> Self {
        Error::Value(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(detail: impl Into<String>, column: usize, pivot: f64) -> Self {
        Error::Numerical { detail: detail.into(), column, pivot }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dim(m) => write!(f, "dimension mismatch: {m}"),
            Error::Value(m) => write!(f, "invalid value: {m}"),
            Error::Config(m) => write!(f, "invalid config: {m}"),
            Error::Numerical { detail, column, pivot } => {
                write!(f, "numerical failure at column {column} (pivot {pivot:e}): {detail}")
            }
            Error::PoolTooSmall { needed, available } => {
                write!(f, "pool too small: need {needed} rows, have {available}")
            }
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
