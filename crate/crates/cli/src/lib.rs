//! File formats and orchestration for the `hessforge` binary.

pub mod container;
pub mod manifest;
pub mod pools;
pub mod run;
