//! Reference layer geometries and seeded synthetic weights.
//!
//! AlexNet's grouped convolutions (conv2, conv4, conv5) are flattened to their
//! per-group input depth so parameter and FLOP counts match the usual figures.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::model::{LayerSpec, WeightTensor};

pub fn alexnet() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv("conv1", [96, 3, 11, 11], 0, (227, 227)).with_stride(4),
        LayerSpec::conv("conv2", [256, 48, 5, 5], 2, (27, 27)),
        LayerSpec::conv("conv3", [384, 256, 3, 3], 1, (13, 13)),
        LayerSpec::conv("conv4", [384, 192, 3, 3], 1, (13, 13)),
        LayerSpec::conv("conv5", [256, 192, 3, 3], 1, (13, 13)),
        LayerSpec::fully_connected("fc6", 4096, 9216),
        LayerSpec::fully_connected("fc7", 4096, 4096),
        LayerSpec::fully_connected("fc8", 1000, 4096),
    ]
}

pub fn vgg16() -> Vec<LayerSpec> {
    vgg16_scaled(1, 224)
}

/// VGG-16 with every channel width divided by `width_div` and a square
/// `input` image (must be divisible by 16 so the pooled sizes stay integral).
pub fn vgg16_scaled(width_div: usize, input: usize) -> Vec<LayerSpec> {
    assert!(width_div >= 1 && input.is_multiple_of(16) && input > 0);
    const BLOCKS: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
    let mut layers = Vec::new();
    let mut in_ch = 3;
    let mut hw = input;
    for (block, &(width, reps)) in BLOCKS.iter().enumerate() {
        let out = (width / width_div).max(1);
        for rep in 0..reps {
            let name = format!("conv{}_{}", block + 1, rep + 1);
            layers.push(LayerSpec::conv(name, [out, in_ch, 3, 3], 1, (hw, hw)));
            in_ch = out;
        }
        if block < 4 {
            hw /= 2;
        }
    }
    let flat = in_ch * (hw / 2) * (hw / 2);
    let fc = (4096 / width_div).max(1);
    layers.push(LayerSpec::fully_connected("fc6", fc, flat));
    layers.push(LayerSpec::fully_connected("fc7", fc, fc));
    layers.push(LayerSpec::fully_connected("fc8", 1000, fc));
    layers
}

/// A small three-layer model for quick experiments.
pub fn toy() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv("conv1", [8, 4, 3, 3], 1, (12, 12)),
        LayerSpec::conv("conv2", [8, 8, 3, 3], 1, (12, 12)),
        LayerSpec::fully_connected("fc", 10, 72),
    ]
}

/// Weights with log-normal magnitude variation at every grain level
/// (filter, kernel, row vector, weight) times a unit normal.
///
/// Layer `i` draws from ChaCha stream `i` so layers are independent of each other.
pub fn synthetic_model(specs: &[LayerSpec], seed: u64) -> Result<Vec<WeightTensor>> {
    const SIGMA: f64 = 0.5;
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let scale = |rng: &mut ChaCha8Rng| {
                let z: f64 = StandardNormal.sample(rng);
                (SIGMA * z).exp()
            };
            let [c, k, r, s] = spec.dims();
            let base = (2.0 / (k * r * s) as f64).sqrt();
            let mut values = Vec::with_capacity(spec.param_count());
            for _ in 0..c {
                let filter = scale(&mut rng);
                for _ in 0..k {
                    let kernel = scale(&mut rng);
                    for _ in 0..r {
                        let row = scale(&mut rng);
                        for _ in 0..s {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            values.push((base * filter * kernel * row * z) as f32);
                        }
                    }
                }
            }
            WeightTensor::new(spec.clone(), values)
        })
        .collect()
}
