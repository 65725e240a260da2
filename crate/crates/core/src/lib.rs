//! Granularity-aware magnitude pruning for convolutional networks.
//!
//! * [`model`]: layer geometry, `C x K x R x S` weight tensors, grain partitions, masks
//!   and the manifest/blob file format.
//! * [`pruning`]: L1 grain saliency, target-sparsity masks, sensitivity scans and the
//!   iterative pruning driver.
//! * [`storage`]: grain-shared 4-bit relative index encoding, storage ratios, k-means
//!   codebooks and accuracy interpolation.
//! * [`sim`]: scatter-add sparse dataflow simulation counting output memory references,
//!   plus FLOP accounting.
//! * [`zoo`]: AlexNet / VGG-16 geometries and seeded synthetic models.

pub mod error;
pub mod model;
pub mod pruning;
pub mod sim;
pub mod storage;
pub mod zoo;

mod util;

pub use error::{Error, Result};
pub use model::{
    apply_mask, conv_density, load_manifest, load_masks, load_model, partition, save_masks,
    save_model, GrainPartition, GrainShape, LayerKind, LayerSpec, PruneMask, WeightTensor,
};
pub use util::write_atomic;
