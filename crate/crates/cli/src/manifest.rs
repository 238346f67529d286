//! Model manifest: names the layer weight tensors in order and optionally an
//! embedding tensor mapping raw inputs to the first layer's features.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use hessforge_core::pipeline::{Layer, LayerStack};
use hessforge_core::Matrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestLayer {
    pub name: String,
    pub weight_tensor: String,
    pub in_features: usize,
    pub out_features: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub layers: Vec<ManifestLayer>,
    /// Tensor mapping raw inputs to first-layer features; absent means the
    /// inputs are used as-is.
    #[serde(default)]
    pub embedding_tensor: Option<String>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, ManifestError> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(path)?)?;
    if manifest.layers.is_empty() {
        return Err(ManifestError::Invalid("manifest lists no layers".into()));
    }
    for pair in manifest.layers.windows(2) {
        if pair[1].in_features != pair[0].out_features {
            return Err(ManifestError::Invalid(format!(
                "layer {} expects {} inputs but {} produces {}",
                pair[1].name, pair[1].in_features, pair[0].name, pair[0].out_features
            )));
        }
    }
    Ok(manifest)
}

impl Manifest {
    /// Pulls the named tensors out of a container and checks every declared
    /// shape, returning the layer stack and the embedding matrix if any.
    pub fn resolve(
        &self,
        tensors: &BTreeMap<String, Matrix>,
    ) -> Result<(LayerStack, Option<Matrix>), ManifestError> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for ml in &self.layers {
            let w = tensors.get(&ml.weight_tensor).ok_or_else(|| {
                ManifestError::Invalid(format!(
                    "layer {} names missing tensor {}",
                    ml.name, ml.weight_tensor
                ))
            })?;
            if w.rows() != ml.out_features || w.cols() != ml.in_features {
                return Err(ManifestError::Invalid(format!(
                    "tensor {} is {}x{} but layer {} declares {}x{}",
                    ml.weight_tensor,
                    w.rows(),
                    w.cols(),
                    ml.name,
                    ml.out_features,
                    ml.in_features
                )));
            }
            layers.push(Layer::new(ml.name.clone(), w.clone()));
        }
        let stack = LayerStack::new(layers)
            .map_err(|e| ManifestError::Invalid(e.to_string()))?;
        let embedding = match &self.embedding_tensor {
            None => None,
            Some(name) => {
                let u = tensors.get(name).ok_or_else(|| {
                    ManifestError::Invalid(format!("embedding tensor {name} is missing"))
                })?;
                if u.cols() != stack.in_features() {
                    return Err(ManifestError::Invalid(format!(
                        "embedding tensor {name} maps to {} features but the first layer takes {}",
                        u.cols(),
                        stack.in_features()
                    )));
                }
                Some(u.clone())
            }
        };
        Ok((stack, embedding))
    }
}
