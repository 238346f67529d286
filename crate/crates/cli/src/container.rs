//! Tensor container: an 8-byte little-endian header length, a canonical
//! JSON header (sorted tensor names, fixed field order), then a contiguous
//! little-endian f32 payload. Offsets are relative to the payload start and
//! tensors are packed tightly in name order, so equal contents always give
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use hessforge_core::Matrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed container: {0}")]
    Format(String),
    #[error("unsupported dtype {0:?} (only \"f32\" is understood)")]
    UnsupportedDtype(String),
    #[error("bad tensor value: {0}")]
    Value(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    dtype: String,
    shape: [usize; 2],
    offset_begin: u64,
    offset_end: u64,
}

/// Serializes the tensors to the canonical byte layout.
pub fn container_bytes(tensors: &BTreeMap<String, Matrix>) -> Result<Vec<u8>, ContainerError> {
    let mut header = BTreeMap::new();
    let mut offset = 0u64;
    for (name, m) in tensors {
        let bytes = (m.rows() * m.cols() * 4) as u64;
        header.insert(
            name.clone(),
            Entry {
                dtype: "f32".into(),
                shape: [m.rows(), m.cols()],
                offset_begin: offset,
                offset_end: offset + bytes,
            },
        );
        offset += bytes;
    }
    let hjson = serde_json::to_vec(&header).expect("header serialization cannot fail");
    let mut out = Vec::with_capacity(8 + hjson.len() + offset as usize);
    out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
    out.extend_from_slice(&hjson);
    for (name, m) in tensors {
        for &v in m.as_slice() {
            if !v.is_finite() {
                return Err(ContainerError::Value(format!("tensor {name} holds a non-finite value")));
            }
            let f = v as f32;
            if !f.is_finite() {
                return Err(ContainerError::Value(format!("tensor {name} overflows f32 range")));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_container(
    path: impl AsRef<Path>,
    tensors: &BTreeMap<String, Matrix>,
) -> Result<(), ContainerError> {
    Ok(fs::write(path, container_bytes(tensors)?)?)
}

/// Parses the canonical byte layout back into tensors, rejecting anything
/// that `container_bytes` would not have produced.
pub fn parse_container(bytes: &[u8]) -> Result<BTreeMap<String, Matrix>, ContainerError> {
    if bytes.len() < 8 {
        return Err(ContainerError::Format("shorter than the 8-byte header length".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let payload_start = 8usize
        .checked_add(hlen)
        .filter(|&s| s <= bytes.len())
        .ok_or_else(|| ContainerError::Format(format!("header length {hlen} exceeds file size")))?;
    let header: BTreeMap<String, Entry> = serde_json::from_slice(&bytes[8..payload_start])
        .map_err(|e| ContainerError::Format(format!("header is not valid JSON: {e}")))?;
    let payload = &bytes[payload_start..];

    let mut tensors = BTreeMap::new();
    let mut expected = 0u64;
    for (name, entry) in &header {
        if entry.dtype != "f32" {
            return Err(ContainerError::UnsupportedDtype(entry.dtype.clone()));
        }
        let count = entry.shape[0]
            .checked_mul(entry.shape[1])
            .ok_or_else(|| ContainerError::Format(format!("tensor {name} shape overflows")))?;
        if entry.offset_begin != expected {
            return Err(ContainerError::Format(format!(
                "tensor {name} starts at {} but {} bytes precede it",
                entry.offset_begin, expected
            )));
        }
        if entry.offset_end != entry.offset_begin + (count * 4) as u64 {
            return Err(ContainerError::Format(format!(
                "tensor {name} spans {} bytes but shape {:?} needs {}",
                entry.offset_end - entry.offset_begin,
                entry.shape,
                count * 4
            )));
        }
        expected = entry.offset_end;
        let begin = entry.offset_begin as usize;
        let end = entry.offset_end as usize;
        if end > payload.len() {
            return Err(ContainerError::Format(format!("tensor {name} runs past the payload")));
        }
        let data: Vec<f64> = payload[begin..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let m = Matrix::from_vec(entry.shape[0], entry.shape[1], data)
            .map_err(|e| ContainerError::Format(format!("tensor {name}: {e}")))?;
        tensors.insert(name.clone(), m);
    }
    if expected as usize != payload.len() {
        return Err(ContainerError::Format(format!(
            "payload holds {} bytes but tensors account for {expected}",
            payload.len()
        )));
    }
    Ok(tensors)
}

pub fn read_container(path: impl AsRef<Path>) -> Result<BTreeMap<String, Matrix>, ContainerError> {
    parse_container(&fs::read(path)?)
}
