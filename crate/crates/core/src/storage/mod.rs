//! Sparse storage accounting: encoding, storage ratios, quantization, interpolation.

mod encode;
mod interp;
mod quant;
mod report;

pub use encode::{
    bits_for, encode, encode_model, encode_with_codebook, SparseEncoding, ValueCoding, MAX_GAP,
};
pub use interp::{bracket_at_accuracy, interpolate_at_accuracy, Bracket};
pub use quant::{quantize, Codebook, LinearQuantizer};
pub use report::{storage_ratio, LayerStorage, StorageAggregate, StorageReport};
