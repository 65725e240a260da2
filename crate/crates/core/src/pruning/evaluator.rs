use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{PruneMask, WeightTensor};

/// Quality score of a (masked) model; higher is better.
///
/// Implementations must be deterministic for a fixed construction seed.
pub trait Evaluator {
    fn evaluate(&mut self, model: &[WeightTensor]) -> Result<f64>;

    /// Called after each pruning stage has been masked, before evaluation.
    /// Deleted weights are re-zeroed afterwards, so a hook may update all values freely.
    fn retrain(
        &mut self,
        _model: &mut [WeightTensor],
        _masks: &[PruneMask],
        _stage: usize,
    ) -> Result<()> {
        Ok(())
    }
}

impl<F> Evaluator for F
where
    F: FnMut(&[WeightTensor]) -> Result<f64>,
{
    fn evaluate(&mut self, model: &[WeightTensor]) -> Result<f64> {
        self(model)
    }
}

struct LayerProbe {
    name: String,
    fan_in: usize,
    outputs: usize,
    patches: Vec<f32>,
    reference: Vec<f64>,
    energy: f64,
}

/// Layer-output distortion against a reference model.
///
/// Each layer sees `batch` random input patches (one output pixel each) drawn
/// from N(0, 1). The score is minus the mean, over layers, of
/// `||y - y_ref||^2 / ||y_ref||^2`.
pub struct DistortionEvaluator {
    probes: Vec<LayerProbe>,
}

fn layer_outputs(weights: &[f32], patches: &[f32], fan_in: usize, outputs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(outputs * patches.len() / fan_in);
    for patch in patches.chunks_exact(fan_in) {
        for row in weights.chunks_exact(fan_in).take(outputs) {
            let y: f64 = row
                .iter()
                .zip(patch)
                .map(|(&w, &x)| w as f64 * x as f64)
                .sum();
            out.push(y);
        }
    }
    out
}

impl DistortionEvaluator {
    pub const DEFAULT_BATCH: usize = 64;

    pub fn new(reference: &[WeightTensor], batch: usize, seed: u64) -> Result<Self> {
        if batch == 0 {
            return Err(Error::InvalidArgument(
                "evaluator batch must be >= 1".into(),
            ));
        }
        let probes = reference
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let spec = t.spec();
                let fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let patches: Vec<f32> = (0..batch * fan_in)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z as f32
                    })
                    .collect();
                let reference = layer_outputs(t.values(), &patches, fan_in, spec.out_channels);
                let energy = reference.iter().map(|y| y * y).sum::<f64>();
                LayerProbe {
                    name: spec.name.clone(),
                    fan_in,
                    outputs: spec.out_channels,
                    patches,
                    reference,
                    energy,
                }
            })
            .collect();
        Ok(DistortionEvaluator { probes })
    }

    /// Relative output distortion of each layer.
    pub fn layer_distortions(&self, model: &[WeightTensor]) -> Result<Vec<f64>> {
        if model.len() != self.probes.len() {
            return Err(Error::InvalidArgument(format!(
                "evaluator built for {} layers, got {}",
                self.probes.len(),
                model.len()
            )));
        }
        self.probes
            .iter()
            .zip(model)
            .map(|(probe, t)| {
                if t.name() != probe.name || t.len() != probe.fan_in * probe.outputs {
                    return Err(Error::LayerMismatch {
                        expected: probe.name.clone(),
                        actual: t.name().to_string(),
                    });
                }
                let y = layer_outputs(t.values(), &probe.patches, probe.fan_in, probe.outputs);
                let err: f64 = y
                    .iter()
                    .zip(&probe.reference)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                Ok(if probe.energy > 0.0 {
                    err / probe.energy
                } else {
                    err
                })
            })
            .collect()
    }

    pub fn distortion(&self, model: &[WeightTensor]) -> Result<f64> {
        let per_layer = self.layer_distortions(model)?;
        if per_layer.is_empty() {
            return Ok(0.0);
        }
        Ok(per_layer.iter().sum::<f64>() / per_layer.len() as f64)
    }
}

impl Evaluator for DistortionEvaluator {
    fn evaluate(&mut self, model: &[WeightTensor]) -> Result<f64> {
        Ok(-self.distortion(model)?)
    }
}
