use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerSpec, PruneMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub layer: String,
    pub conv: bool,
    pub params: u64,
    pub kept: u64,
    pub flops: u64,
    pub dense_flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub layers: Vec<LayerFlops>,
    pub total_flops: u64,
    pub total_dense_flops: u64,
    /// `total_flops / total_dense_flops`.
    pub ratio: f64,
}

/// Multiply-accumulates per kept weight: one per output position for conv, one for FC.
fn positions(spec: &LayerSpec) -> u64 {
    if spec.is_conv() {
        let (h, w) = spec.output_hw();
        (h * w) as u64
    } else {
        1
    }
}

/// Two FLOPs per MAC, only kept weights counted.
pub fn count_flops(specs: &[LayerSpec], masks: &[PruneMask]) -> Result<FlopsReport> {
    if specs.len() != masks.len() {
        return Err(Error::InvalidArgument(format!(
            "{} masks for {} layers",
            masks.len(),
            specs.len()
        )));
    }
    let kept = specs
        .iter()
        .zip(masks)
        .map(|(spec, mask)| {
            if mask.layer() != spec.name {
                return Err(Error::LayerMismatch {
                    expected: spec.name.clone(),
                    actual: mask.layer().to_string(),
                });
            }
            if mask.len() != spec.param_count() {
                return Err(Error::ShapeMismatch {
                    layer: spec.name.clone(),
                    expected: spec.param_count(),
                    actual: mask.len(),
                    unit: "mask entries",
                });
            }
            Ok(mask.kept() as u64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(build(specs, &kept))
}

/// FLOPs of the unpruned model.
pub fn count_dense_flops(specs: &[LayerSpec]) -> FlopsReport {
    let kept: Vec<u64> = specs.iter().map(|s| s.param_count() as u64).collect();
    build(specs, &kept)
}

fn build(specs: &[LayerSpec], kept: &[u64]) -> FlopsReport {
    let layers: Vec<LayerFlops> = specs
        .iter()
        .zip(kept)
        .map(|(spec, &kept)| {
            let p = positions(spec);
            LayerFlops {
                layer: spec.name.clone(),
                conv: spec.is_conv(),
                params: spec.param_count() as u64,
                kept,
                flops: 2 * kept * p,
                dense_flops: 2 * spec.param_count() as u64 * p,
            }
        })
        .collect();
    let total_flops = layers.iter().map(|l| l.flops).sum();
    let total_dense_flops: u64 = layers.iter().map(|l| l.dense_flops).sum();
    FlopsReport {
        ratio: if total_dense_flops > 0 {
            total_flops as f64 / total_dense_flops as f64
        } else {
            0.0
        },
        layers,
        total_flops,
        total_dense_flops,
    }
}

impl FlopsReport {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "conv", "params", "kept", "flops", "dense_flops"])?;
        for l in &self.layers {
            w.write_record([
                l.layer.clone(),
                l.conv.to_string(),
                l.params.to_string(),
                l.kept.to_string(),
                l.flops.to_string(),
                l.dense_flops.to_string(),
            ])?;
        }
        w.write_record([
            "total".to_string(),
            String::new(),
            self.layers
                .iter()
                .map(|l| l.params)
                .sum::<u64>()
                .to_string(),
            self.layers.iter().map(|l| l.kept).sum::<u64>().to_string(),
            self.total_flops.to_string(),
            self.total_dense_flops.to_string(),
        ])?;
        w.into_inner()
            .map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}
