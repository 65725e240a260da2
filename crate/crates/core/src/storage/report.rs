use serde::{Deserialize, Serialize};

use super::encode::{spec_matches, SparseEncoding};
use crate::error::{Error, Result};
use crate::model::{GrainShape, LayerSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStorage {
    pub layer: String,
    pub conv: bool,
    pub granularity: GrainShape,
    pub params: usize,
    pub kept: usize,
    pub density: f64,
    pub stored_grains: usize,
    pub padding_grains: usize,
    pub bits_values: u64,
    pub bits_indices: u64,
    pub sparse_bits: u64,
    pub dense_bits: u64,
    pub storage_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageAggregate {
    pub params: usize,
    pub kept: usize,
    pub density: f64,
    pub sparse_bits: u64,
    pub dense_bits: u64,
    pub storage_ratio: f64,
}

impl StorageAggregate {
    fn from_layers<'a>(layers: impl Iterator<Item = &'a LayerStorage>) -> Self {
        let (mut params, mut kept, mut sparse_bits, mut dense_bits) = (0, 0, 0, 0);
        for l in layers {
            params += l.params;
            kept += l.kept;
            sparse_bits += l.sparse_bits;
            dense_bits += l.dense_bits;
        }
        StorageAggregate {
            params,
            kept,
            density: ratio(kept as f64, params as f64),
            sparse_bits,
            dense_bits,
            storage_ratio: ratio(sparse_bits as f64, dense_bits as f64),
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Sparse storage against an 8-bit dense model, per layer plus conv-only and
/// whole-model aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub layers: Vec<LayerStorage>,
    pub conv: StorageAggregate,
    pub total: StorageAggregate,
}

pub fn storage_ratio(encodings: &[SparseEncoding], specs: &[LayerSpec]) -> Result<StorageReport> {
    if encodings.len() != specs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} encodings for {} layers",
            encodings.len(),
            specs.len()
        )));
    }
    let layers: Vec<LayerStorage> = encodings
        .iter()
        .zip(specs)
        .map(|(enc, spec)| {
            if !spec_matches(enc, spec) {
                return Err(Error::LayerMismatch {
                    expected: spec.name.clone(),
                    actual: enc.layer.clone(),
                });
            }
            let params = spec.param_count();
            let kept = enc.kept_grains() * enc.grain_size;
            let dense_bits = 8 * params as u64;
            Ok(LayerStorage {
                layer: spec.name.clone(),
                conv: spec.is_conv(),
                granularity: enc.granularity,
                params,
                kept,
                density: ratio(kept as f64, params as f64),
                stored_grains: enc.stored_grains(),
                padding_grains: enc.padding_grains,
                bits_values: enc.bits_values(),
                bits_indices: enc.bits_indices(),
                sparse_bits: enc.bits_total(),
                dense_bits,
                storage_ratio: ratio(enc.bits_total() as f64, dense_bits as f64),
            })
        })
        .collect::<Result<_>>()?;
    Ok(StorageReport {
        conv: StorageAggregate::from_layers(layers.iter().filter(|l| l.conv)),
        total: StorageAggregate::from_layers(layers.iter()),
        layers,
    })
}

impl StorageReport {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    /// One row per layer followed by `conv` and `total` aggregate rows.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "layer",
            "granularity",
            "params",
            "kept",
            "density",
            "stored_grains",
            "padding_grains",
            "bits_values",
            "bits_indices",
            "sparse_bits",
            "dense_bits",
            "storage_ratio",
        ])?;
        for l in &self.layers {
            w.write_record([
                l.layer.clone(),
                l.granularity.to_string(),
                l.params.to_string(),
                l.kept.to_string(),
                l.density.to_string(),
                l.stored_grains.to_string(),
                l.padding_grains.to_string(),
                l.bits_values.to_string(),
                l.bits_indices.to_string(),
                l.sparse_bits.to_string(),
                l.dense_bits.to_string(),
                l.storage_ratio.to_string(),
            ])?;
        }
        for (name, agg) in [("conv", &self.conv), ("total", &self.total)] {
            w.write_record([
                name.to_string(),
                String::new(),
                agg.params.to_string(),
                agg.kept.to_string(),
                agg.density.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                agg.sparse_bits.to_string(),
                agg.dense_bits.to_string(),
                agg.storage_ratio.to_string(),
            ])?;
        }
        w.flush()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        w.into_inner()
            .map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}
