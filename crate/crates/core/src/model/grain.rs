use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{LayerKind, LayerSpec};
use crate::error::{Error, Result};

/// The atom deleted together during pruning.
///
/// Because weights are stored row-major in `(c, k, r, s)` order, every grain
/// is a contiguous run of the flat value array:
///
/// | shape      | grain            | weights per grain | grain count |
/// |------------|------------------|-------------------|-------------|
/// | `Fine0D`   | `(c, k, r, s)`   | 1                 | `C*K*R*S`   |
/// | `Vector1D` | `(c, k, r, ..)`  | `S`               | `C*K*R`     |
/// | `Kernel2D` | `(c, k, .., ..)` | `R*S`             | `C*K`       |
/// | `Filter3D` | `(c, .., .., ..)`| `K*R*S`           | `C`         |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrainShape {
    #[serde(alias = "0d", alias = "fine0d")]
    Fine,
    #[serde(alias = "1d", alias = "vector1d")]
    Vector,
    #[serde(alias = "2d", alias = "kernel2d")]
    Kernel,
    #[serde(alias = "3d", alias = "filter3d")]
    Filter,
}

impl GrainShape {
    pub const ALL: [GrainShape; 4] = [
        GrainShape::Fine,
        GrainShape::Vector,
        GrainShape::Kernel,
        GrainShape::Filter,
    ];

    /// Number of tensor dimensions spanned by one grain.
    pub fn rank(self) -> usize {
        match self {
            GrainShape::Fine => 0,
            GrainShape::Vector => 1,
            GrainShape::Kernel => 2,
            GrainShape::Filter => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GrainShape::Fine => "fine",
            GrainShape::Vector => "vector",
            GrainShape::Kernel => "kernel",
            GrainShape::Filter => "filter",
        }
    }

    pub fn grain_size(self, spec: &LayerSpec) -> usize {
        match self {
            GrainShape::Fine => 1,
            GrainShape::Vector => spec.kernel_w,
            GrainShape::Kernel => spec.kernel_h * spec.kernel_w,
            GrainShape::Filter => spec.in_channels * spec.kernel_h * spec.kernel_w,
        }
    }

    /// The shape a pruning driver actually uses on `spec`: FC layers are always fine-grained.
    pub fn effective_for(self, spec: &LayerSpec) -> GrainShape {
        match spec.kind {
            LayerKind::Conv => self,
            LayerKind::FullyConnected => GrainShape::Fine,
        }
    }

    pub(crate) fn code(self) -> u8 {
        self.rank() as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<GrainShape> {
        GrainShape::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for GrainShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GrainShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fine" | "0d" | "0-d" | "fine0d" | "weight" => Ok(GrainShape::Fine),
            "vector" | "1d" | "1-d" | "vector1d" => Ok(GrainShape::Vector),
            "kernel" | "2d" | "2-d" | "kernel2d" => Ok(GrainShape::Kernel),
            "filter" | "3d" | "3-d" | "filter3d" => Ok(GrainShape::Filter),
            other => Err(Error::InvalidArgument(format!(
                "unknown granularity `{other}` (expected fine, vector, kernel or filter)"
            ))),
        }
    }
}

/// Disjoint cover of a layer's weights into grains, in lexicographic `(c, k, r)` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrainPartition {
    shape: GrainShape,
    layer: String,
    grain_size: usize,
    grain_count: usize,
}

impl GrainPartition {
    pub fn new(spec: &LayerSpec, shape: GrainShape) -> Result<Self> {
        spec.validate()?;
        if shape != GrainShape::Fine && !spec.is_conv() {
            return Err(Error::UnsupportedGranularity {
                layer: spec.name.clone(),
                shape,
            });
        }
        let grain_size = shape.grain_size(spec);
        Ok(GrainPartition {
            shape,
            layer: spec.name.clone(),
            grain_size,
            grain_count: spec.param_count() / grain_size,
        })
    }

    pub fn shape(&self) -> GrainShape {
        self.shape
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    pub fn grain_size(&self) -> usize {
        self.grain_size
    }

    pub fn grain_count(&self) -> usize {
        self.grain_count
    }

    pub fn weight_count(&self) -> usize {
        self.grain_size * self.grain_count
    }

    /// Flat index range of grain `i`.
    #[inline]
    pub fn grain(&self, i: usize) -> Range<usize> {
        let start = i * self.grain_size;
        start..start + self.grain_size
    }

    #[inline]
    pub fn grain_of(&self, flat: usize) -> usize {
        flat / self.grain_size
    }

    pub fn grains(&self) -> impl ExactSizeIterator<Item = Range<usize>> + '_ {
        (0..self.grain_count).map(|i| self.grain(i))
    }

    pub(crate) fn check_len(&self, len: usize, unit: &'static str) -> Result<()> {
        if len != self.weight_count() {
            return Err(Error::ShapeMismatch {
                layer: self.layer.clone(),
                expected: self.weight_count(),
                actual: len,
                unit,
            });
        }
        Ok(())
    }
}

/// Convenience wrapper matching the free-function style of the rest of the API.
pub fn partition(spec: &LayerSpec, shape: GrainShape) -> Result<GrainPartition> {
    GrainPartition::new(spec, shape)
}
