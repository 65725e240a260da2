//! JSON manifest + raw little-endian float32 blobs.
//!
//! ```json
//! { "layers": [ { "name": "conv1", "kind": "conv", "C": 96, "K": 3, "R": 11, "S": 11,
//!                 "stride": 4, "pad": 0, "input_h": 227, "input_w": 227,
//!                 "weights_file": "conv1.bin" } ] }
//! ```
//!
//! `weights_file` is resolved relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LayerSpec, WeightTensor};
use crate::error::{Error, Result};
use crate::util::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLayer {
    #[serde(flatten)]
    pub spec: LayerSpec,
    pub weights_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub layers: Vec<ManifestLayer>,
}

impl ModelManifest {
    pub fn specs(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().map(|l| &l.spec)
    }

    pub fn param_count(&self) -> usize {
        self.specs().map(LayerSpec::param_count).sum()
    }
}

/// Parse and validate a manifest without touching the weight blobs.
pub fn load_manifest(path: &Path) -> Result<ModelManifest> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest: ModelManifest = serde_json::from_slice(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut names = std::collections::HashSet::new();
    for layer in &manifest.layers {
        layer.spec.validate()?;
        if !names.insert(layer.spec.name.as_str()) {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                message: format!("duplicate layer name `{}`", layer.spec.name),
            });
        }
    }
    Ok(manifest)
}

fn blob_path(manifest_path: &Path, file: &str) -> PathBuf {
    manifest_path
        .parent()
        .map(|dir| dir.join(file))
        .unwrap_or_else(|| PathBuf::from(file))
}

/// Reinterpret a float32 LE blob; the caller supplies the layer for error messages.
pub(crate) fn decode_f32_blob(layer: &str, bytes: &[u8], expected: usize) -> Result<Vec<f32>> {
    if bytes.len() != 4 * expected {
        return Err(Error::ShapeMismatch {
            layer: layer.to_string(),
            expected: 4 * expected,
            actual: bytes.len(),
            unit: "bytes",
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            layer: layer.to_string(),
            index,
        });
    }
    Ok(values)
}

pub(crate) fn encode_f32_blob(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Load every layer of a manifest, in manifest order.
pub fn load_model(manifest_path: &Path) -> Result<Vec<WeightTensor>> {
    let manifest = load_manifest(manifest_path)?;
    manifest
        .layers
        .into_iter()
        .map(|layer| {
            let path = blob_path(manifest_path, &layer.weights_file);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let values = decode_f32_blob(&layer.spec.name, &bytes, layer.spec.param_count())?;
            WeightTensor::new(layer.spec, values)
        })
        .collect()
}

/// Write `<dir>/<manifest_name>` plus one `<layer>.bin` blob per tensor.
/// Returns the manifest path.
pub fn save_model(dir: &Path, manifest_name: &str, tensors: &[WeightTensor]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut layers = Vec::with_capacity(tensors.len());
    for t in tensors {
        let file = format!("{}.bin", t.name());
        write_atomic(&dir.join(&file), &encode_f32_blob(t.values()))?;
        layers.push(ManifestLayer {
            spec: t.spec().clone(),
            weights_file: file,
        });
    }
    let manifest_path = dir.join(manifest_name);
    let mut json = serde_json::to_vec_pretty(&ModelManifest { layers })?;
    json.push(b'\n');
    write_atomic(&manifest_path, &json)?;
    Ok(manifest_path)
}
