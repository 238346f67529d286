//! Calibration pool loading. A pool file is a tensor container holding one
//! example per tensor, read in sorted name order. A file can carry both
//! pools at once under `generic/` and `domain/` name prefixes; a file with
//! no prefixed names is taken whole as the requested pool.

use std::fmt;
use std::path::Path;

use hessforge_core::calib::ExamplePool;
use hessforge_core::Matrix;
use thiserror::Error;

use crate::container::{read_container, ContainerError};

pub const GENERIC_PREFIX: &str = "generic/";
pub const DOMAIN_PREFIX: &str = "domain/";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Generic,
    Domain,
}

impl PoolKind {
    fn prefix(self) -> &'static str {
        match self {
            PoolKind::Generic => GENERIC_PREFIX,
            PoolKind::Domain => DOMAIN_PREFIX,
        }
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolKind::Generic => "generic",
            PoolKind::Domain => "domain",
        })
    }
}

#[derive(Debug, Error)]
pub enum PoolError {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("no {0} examples in pool file")]
    Empty(PoolKind),
    #[error("inconsistent pool: {0}")]
    Shape(String),
}

/// Reads the `kind` pool from a container file.
pub fn load_pool(path: impl AsRef<Path>, kind: PoolKind) -> Result<ExamplePool, PoolError> {
    let tensors = read_container(path)?;
    let has_prefixes = tensors
        .keys()
        .any(|n| n.starts_with(GENERIC_PREFIX) || n.starts_with(DOMAIN_PREFIX));
    let examples: Vec<Matrix> = tensors
        .into_iter()
        .filter(|(name, _)| !has_prefixes || name.starts_with(kind.prefix()))
        .map(|(_, m)| m)
        .collect();
    if examples.is_empty() {
        return Err(PoolError::Empty(kind));
    }
    ExamplePool::new(examples).map_err(|e| PoolError::Shape(e.to_string()))
}
