//! Magnitude pruning at a chosen grain size.
//!
//! Grains are ranked by the L1 norm of their weights and the lowest-ranked
//! grains are deleted. The number of deleted grains is
//! `round_half_up(target * grain_count)`; equal saliencies delete the lower
//! grain index first.

mod evaluator;
mod iterative;
mod sensitivity;

pub use evaluator::{DistortionEvaluator, Evaluator};
pub use iterative::{iterative_prune, IterativeOutcome, PruneSchedule, StageResult};
pub use sensitivity::{
    plan_stage, schedule_from_sensitivity, sensitivity_scan, LayerSensitivity, SensitivityPoint,
    SensitivityReport,
};

use crate::error::{Error, Result};
use crate::model::{GrainPartition, GrainShape, PruneMask, WeightTensor};
use crate::util::round_half_up;

/// One L1 score per grain, in partition order.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyVector {
    pub shape: GrainShape,
    pub scores: Vec<f64>,
}

pub fn saliency(tensor: &WeightTensor, partition: &GrainPartition) -> Result<SaliencyVector> {
    if partition.layer() != tensor.name() {
        return Err(Error::LayerMismatch {
            expected: tensor.name().to_string(),
            actual: partition.layer().to_string(),
        });
    }
    partition.check_len(tensor.len(), "values")?;
    let values = tensor.values();
    let scores = partition
        .grains()
        .map(|g| values[g].iter().map(|&w| (w as f64).abs()).sum())
        .collect();
    Ok(SaliencyVector {
        shape: partition.shape(),
        scores,
    })
}

pub(crate) fn check_fraction(what: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what,
            value,
            range: "[0, 1]",
        })
    }
}

/// Number of grains deleted for `target` sparsity over `grain_count` grains.
pub fn grains_to_delete(target: f64, grain_count: usize) -> usize {
    round_half_up(target * grain_count as f64).min(grain_count)
}

/// Extend `keep` so that at least `n_delete` grains are deleted, taking the
/// lowest-saliency kept grains first. Already deleted grains stay deleted.
pub(crate) fn extend_deletions(scores: &[f64], keep: &mut [bool], n_delete: usize) {
    let already = keep.iter().filter(|&&k| !k).count();
    if already >= n_delete {
        return;
    }
    let mut candidates: Vec<usize> = (0..scores.len()).filter(|&i| keep[i]).collect();
    candidates.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    for &i in candidates.iter().take(n_delete - already) {
        keep[i] = false;
    }
}

/// Delete the lowest-saliency grains so that `target_sparsity` of the grains are gone.
///
/// Fully-connected layers only support [`GrainShape::Fine`].
pub fn prune_to_sparsity(
    tensor: &WeightTensor,
    shape: GrainShape,
    target_sparsity: f64,
) -> Result<PruneMask> {
    check_fraction("target sparsity", target_sparsity)?;
    let partition = GrainPartition::new(tensor.spec(), shape)?;
    let sal = saliency(tensor, &partition)?;
    let mut keep = vec![true; partition.grain_count()];
    extend_deletions(
        &sal.scores,
        &mut keep,
        grains_to_delete(target_sparsity, partition.grain_count()),
    );
    Ok(PruneMask::from_grains(&partition, &keep))
}
