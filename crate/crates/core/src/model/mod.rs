//! Layer geometry, weight tensors, grain partitions and prune masks.
//!
//! A convolutional layer stores its weights as a `C x K x R x S` tensor
//! (output channels, input channels, kernel height, kernel width) in
//! row-major `(c, k, r, s)` order. Fully-connected layers use the same
//! layout with `R = S = 1`, `C` outputs and `K` inputs.

mod grain;
pub(crate) mod io;
mod mask;

pub use grain::{partition, GrainPartition, GrainShape};
pub use io::{load_manifest, load_model, save_model, ManifestLayer, ModelManifest};
pub use mask::{apply_mask, load_masks, save_masks, MaskFile, MaskRecord, PruneMask};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "conv", alias = "Conv")]
    Conv,
    #[serde(rename = "fc", alias = "FullyConnected")]
    FullyConnected,
}

fn one() -> usize {
    1
}

/// Geometry of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    #[serde(rename = "C")]
    pub out_channels: usize,
    #[serde(rename = "K")]
    pub in_channels: usize,
    #[serde(rename = "R")]
    pub kernel_h: usize,
    #[serde(rename = "S")]
    pub kernel_w: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
    #[serde(default = "one")]
    pub input_h: usize,
    #[serde(default = "one")]
    pub input_w: usize,
}

impl LayerSpec {
    /// Stride-1 convolution geometry, mostly useful for tests and synthetic models.
    pub fn conv(
        name: impl Into<String>,
        dims: [usize; 4],
        pad: usize,
        input_hw: (usize, usize),
    ) -> Self {
        let [c, k, r, s] = dims;
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv,
            out_channels: c,
            in_channels: k,
            kernel_h: r,
            kernel_w: s,
            stride: 1,
            pad,
            input_h: input_hw.0,
            input_w: input_hw.1,
        }
    }

    pub fn fully_connected(name: impl Into<String>, outputs: usize, inputs: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::FullyConnected,
            out_channels: outputs,
            in_channels: inputs,
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            pad: 0,
            input_h: 1,
            input_w: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn is_conv(&self) -> bool {
        self.kind == LayerKind::Conv
    }

    /// `C * K * R * S`.
    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn dims(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        ]
    }

    /// Output spatial size `(H_out, W_out)`; `(1, 1)` for FC layers.
    pub fn output_hw(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::FullyConnected => (1, 1),
            LayerKind::Conv => (
                (self.input_h + 2 * self.pad - self.kernel_h) / self.stride + 1,
                (self.input_w + 2 * self.pad - self.kernel_w) / self.stride + 1,
            ),
        }
    }

    /// Flat offset of weight `(c, k, r, s)`.
    #[inline]
    pub fn offset(&self, c: usize, k: usize, r: usize, s: usize) -> usize {
        ((c * self.in_channels + k) * self.kernel_h + r) * self.kernel_w + s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid_layer(&self.name, msg));
        if self.name.is_empty() {
            return Err(Error::invalid_layer("<unnamed>", "layer name is empty"));
        }
        for (label, v) in [
            ("C", self.out_channels),
            ("K", self.in_channels),
            ("R", self.kernel_h),
            ("S", self.kernel_w),
            ("stride", self.stride),
        ] {
            if v == 0 {
                return bad(format!("{label} must be >= 1"));
            }
        }
        match self.kind {
            LayerKind::FullyConnected => {
                if self.kernel_h != 1 || self.kernel_w != 1 {
                    return bad("fully-connected layers must have R = S = 1".into());
                }
            }
            LayerKind::Conv => {
                if self.input_h == 0 || self.input_w == 0 {
                    return bad("input_h and input_w must be >= 1".into());
                }
                for (axis, input, kernel) in [
                    ("height", self.input_h, self.kernel_h),
                    ("width", self.input_w, self.kernel_w),
                ] {
                    let padded = input + 2 * self.pad;
                    if padded < kernel {
                        return bad(format!(
                            "kernel {axis} {kernel} exceeds padded input {padded}"
                        ));
                    }
                    if !(padded - kernel).is_multiple_of(self.stride) {
                        return bad(format!(
                            "output {axis} ({padded} - {kernel}) / {} is not an integer",
                            self.stride
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A layer's weights with its geometry. Values are finite and `C*K*R*S` long.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    spec: LayerSpec,
    values: Vec<f32>,
}

impl WeightTensor {
    pub fn new(spec: LayerSpec, values: Vec<f32>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.param_count() {
            return Err(Error::ShapeMismatch {
                layer: spec.name.clone(),
                expected: spec.param_count(),
                actual: values.len(),
                unit: "values",
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: spec.name.clone(),
                index,
            });
        }
        Ok(WeightTensor { spec, values })
    }

    pub fn zeros(spec: LayerSpec) -> Result<Self> {
        let n = spec.param_count();
        Self::new(spec, vec![0.0; n])
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Replace the values in place; used by retrain hooks. Rejects non-finite values.
    pub fn set_values(&mut self, values: Vec<f32>) -> Result<()> {
        let replaced = WeightTensor::new(self.spec.clone(), values)?;
        *self = replaced;
        Ok(())
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Fraction of kept weights over convolutional layers, or over all layers when
/// the model has no convolutions.
pub fn conv_density<'a, I>(specs: I, masks: &[PruneMask]) -> f64
where
    I: IntoIterator<Item = &'a LayerSpec>,
    I::IntoIter: Clone,
{
    let specs = specs.into_iter();
    let any_conv = specs.clone().any(|s| s.is_conv());
    let (mut kept, mut total) = (0usize, 0usize);
    for (spec, mask) in specs.zip(masks) {
        if any_conv && !spec.is_conv() {
            continue;
        }
        kept += mask.kept();
        total += mask.len();
    }
    if total == 0 {
        1.0
    } else {
        kept as f64 / total as f64
    }
}
