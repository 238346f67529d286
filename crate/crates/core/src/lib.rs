//! Layer-wise one-shot weight compression driven by calibration-weighted
//! Hessian statistics.
//!
//! The crate is `no_std` + `alloc`: everything here is pure computation on
//! in-memory matrices. File formats, CLI and reporting live in the companion
//! `hessforge` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod calib;
pub mod compress;
pub mod error;
pub mod eval;
pub mod hessian;
pub mod linalg;
pub mod matrix;
pub mod oracle;
pub mod pipeline;
pub mod saliency;

pub use error::{Error, Result};
pub use matrix::Matrix;
