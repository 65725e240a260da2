use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{GrainPartition, GrainShape, LayerSpec, WeightTensor};
use crate::error::{Error, Result};
use crate::util::write_atomic;

/// Keep/delete decision per weight, aligned with `WeightTensor::values`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    layer: String,
    shape: GrainShape,
    keep: Vec<bool>,
}

impl PruneMask {
    pub fn new(layer: impl Into<String>, shape: GrainShape, keep: Vec<bool>) -> Self {
        PruneMask {
            layer: layer.into(),
            shape,
            keep,
        }
    }

    pub fn all_keep(spec: &LayerSpec, shape: GrainShape) -> Self {
        Self::new(spec.name.clone(), shape, vec![true; spec.param_count()])
    }

    /// Builds a mask from per-grain keep flags.
    pub fn from_grains(partition: &GrainPartition, grain_keep: &[bool]) -> Self {
        debug_assert_eq!(grain_keep.len(), partition.grain_count());
        let mut keep = Vec::with_capacity(partition.weight_count());
        for &k in grain_keep {
            keep.extend(std::iter::repeat_n(k, partition.grain_size()));
        }
        Self::new(partition.layer(), partition.shape(), keep)
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    pub fn shape(&self) -> GrainShape {
        self.shape
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn density(&self) -> f64 {
        if self.keep.is_empty() {
            return 1.0;
        }
        self.kept() as f64 / self.keep.len() as f64
    }

    /// Per-grain keep flags; fails if any grain is mixed.
    pub fn grain_keep(&self, partition: &GrainPartition) -> Result<Vec<bool>> {
        partition.check_len(self.keep.len(), "mask entries")?;
        partition
            .grains()
            .enumerate()
            .map(|(i, range)| {
                let first = self.keep[range.start];
                if self.keep[range].iter().all(|&k| k == first) {
                    Ok(first)
                } else {
                    Err(Error::NonAtomicMask {
                        layer: self.layer.clone(),
                        shape: partition.shape(),
                        grain: i,
                    })
                }
            })
            .collect()
    }

    pub fn is_atomic(&self, partition: &GrainPartition) -> bool {
        self.grain_keep(partition).is_ok()
    }

    fn to_record(&self) -> MaskRecord {
        let mut bytes = vec![0u8; self.keep.len().div_ceil(8)];
        for (i, _) in self.keep.iter().enumerate().filter(|(_, &k)| k) {
            bytes[i / 8] |= 1 << (i % 8);
        }
        MaskRecord {
            layer: self.layer.clone(),
            granularity: self.shape,
            len: self.keep.len(),
            bits: BASE64.encode(bytes),
            density: self.density(),
        }
    }

    fn from_record(rec: &MaskRecord) -> Result<Self> {
        let bytes = BASE64
            .decode(&rec.bits)
            .map_err(|e| Error::Corrupt(format!("mask `{}`: {e}", rec.layer)))?;
        if bytes.len() != rec.len.div_ceil(8) {
            return Err(Error::ShapeMismatch {
                layer: rec.layer.clone(),
                expected: rec.len.div_ceil(8),
                actual: bytes.len(),
                unit: "mask bytes",
            });
        }
        let keep = (0..rec.len)
            .map(|i| bytes[i / 8] >> (i % 8) & 1 == 1)
            .collect();
        Ok(PruneMask::new(rec.layer.clone(), rec.granularity, keep))
    }
}

/// Zero the weights a mask deletes; kept weights are copied unchanged.
pub fn apply_mask(tensor: &WeightTensor, mask: &PruneMask) -> Result<WeightTensor> {
    if mask.layer != tensor.name() {
        return Err(Error::LayerMismatch {
            expected: tensor.name().to_string(),
            actual: mask.layer.clone(),
        });
    }
    if mask.len() != tensor.len() {
        return Err(Error::ShapeMismatch {
            layer: tensor.name().to_string(),
            expected: tensor.len(),
            actual: mask.len(),
            unit: "mask entries",
        });
    }
    let values = tensor
        .values()
        .iter()
        .zip(&mask.keep)
        .map(|(&v, &k)| if k { v } else { 0.0 })
        .collect();
    WeightTensor::new(tensor.spec().clone(), values)
}

/// On-disk form of one mask: keep bits packed LSB-first and base64 encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub layer: String,
    pub granularity: GrainShape,
    pub len: usize,
    pub bits: String,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    pub masks: Vec<MaskRecord>,
}

impl MaskFile {
    pub fn from_masks(masks: &[PruneMask]) -> Self {
        MaskFile {
            masks: masks.iter().map(PruneMask::to_record).collect(),
        }
    }

    pub fn into_masks(self) -> Result<Vec<PruneMask>> {
        self.masks.iter().map(PruneMask::from_record).collect()
    }
}

pub fn save_masks(path: &Path, masks: &[PruneMask]) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(&MaskFile::from_masks(masks))?;
    json.push(b'\n');
    write_atomic(path, &json)
}

pub fn load_masks(path: &Path) -> Result<Vec<PruneMask>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: MaskFile = serde_json::from_slice(&bytes).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    file.into_masks()
}
