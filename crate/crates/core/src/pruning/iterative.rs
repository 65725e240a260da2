use serde::{Deserialize, Serialize};

use super::{check_fraction, extend_deletions, grains_to_delete, saliency, Evaluator};
use crate::error::{Error, Result};
use crate::model::{apply_mask, conv_density, GrainPartition, GrainShape, PruneMask, WeightTensor};

/// Per-stage, per-layer target sparsities. Targets never decrease across stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct PruneSchedule {
    stages: Vec<Vec<f64>>,
}

impl PruneSchedule {
    pub fn new(stages: Vec<Vec<f64>>) -> Result<Self> {
        let width = stages.first().map_or(0, Vec::len);
        for (t, stage) in stages.iter().enumerate() {
            if stage.len() != width {
                return Err(Error::InvalidArgument(format!(
                    "stage {t} has {} targets, expected {width}",
                    stage.len()
                )));
            }
            for &s in stage {
                check_fraction("stage target", s)?;
            }
            if t > 0 {
                for (layer, (&prev, &cur)) in stages[t - 1].iter().zip(stage).enumerate() {
                    if cur < prev {
                        return Err(Error::NonMonotoneSchedule {
                            layer,
                            stage: t,
                            from: prev,
                            to: cur,
                        });
                    }
                }
            }
        }
        Ok(PruneSchedule { stages })
    }

    /// The same target for every layer at each stage.
    pub fn uniform(targets: &[f64], layers: usize) -> Result<Self> {
        Self::new(targets.iter().map(|&t| vec![t; layers]).collect())
    }

    pub fn stages(&self) -> &[Vec<f64>] {
        &self.stages
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }
}

impl TryFrom<Vec<Vec<f64>>> for PruneSchedule {
    type Error = Error;

    fn try_from(stages: Vec<Vec<f64>>) -> Result<Self> {
        PruneSchedule::new(stages)
    }
}

impl From<PruneSchedule> for Vec<Vec<f64>> {
    fn from(s: PruneSchedule) -> Self {
        s.stages
    }
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub stage: usize,
    /// Kept fraction over convolutional layers.
    pub density: f64,
    pub score: f64,
    pub masks: Vec<PruneMask>,
}

#[derive(Debug, Clone)]
pub struct IterativeOutcome {
    pub stages: Vec<StageResult>,
    /// Weights after the last stage (masked, and retrained if the hook did so).
    pub weights: Vec<WeightTensor>,
}

impl IterativeOutcome {
    pub fn final_masks(&self) -> &[PruneMask] {
        self.stages.last().map_or(&[], |s| &s.masks)
    }

    /// `(density, score)` per stage.
    pub fn curve(&self) -> Vec<(f64, f64)> {
        self.stages.iter().map(|s| (s.density, s.score)).collect()
    }
}

/// Prune, retrain, evaluate; once per schedule stage.
///
/// Each stage ranks grains by the saliency of the current weights and deletes
/// more of them until the stage target is met. Deleted grains are never revived.
pub fn iterative_prune(
    model: &[WeightTensor],
    shape: GrainShape,
    schedule: &PruneSchedule,
    eval: &mut dyn Evaluator,
) -> Result<IterativeOutcome> {
    let partitions = model
        .iter()
        .map(|t| GrainPartition::new(t.spec(), shape.effective_for(t.spec())))
        .collect::<Result<Vec<_>>>()?;
    let mut grain_keep: Vec<Vec<bool>> = partitions
        .iter()
        .map(|p| vec![true; p.grain_count()])
        .collect();
    let mut weights = model.to_vec();
    let mut stages = Vec::with_capacity(schedule.len());

    for (t, targets) in schedule.stages().iter().enumerate() {
        if targets.len() != model.len() {
            return Err(Error::InvalidArgument(format!(
                "schedule stage {t} has {} targets for {} layers",
                targets.len(),
                model.len()
            )));
        }
        let mut masks = Vec::with_capacity(model.len());
        for (i, partition) in partitions.iter().enumerate() {
            let scores = saliency(&weights[i], partition)?.scores;
            let n_delete = grains_to_delete(targets[i], partition.grain_count());
            extend_deletions(&scores, &mut grain_keep[i], n_delete);
            let mask = PruneMask::from_grains(partition, &grain_keep[i]);
            weights[i] = apply_mask(&weights[i], &mask)?;
            masks.push(mask);
        }
        eval.retrain(&mut weights, &masks, t)?;
        for (w, m) in weights.iter_mut().zip(&masks) {
            *w = apply_mask(w, m)?;
        }
        let score = eval.evaluate(&weights)?;
        let density = conv_density(model.iter().map(WeightTensor::spec), &masks);
        stages.push(StageResult {
            stage: t,
            density,
            score,
            masks,
        });
    }
    Ok(IterativeOutcome { stages, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerSpec;
    use crate::pruning::DistortionEvaluator;
    use crate::zoo;

    fn two_layer() -> Vec<WeightTensor> {
        let specs = vec![
            LayerSpec::conv("a", [4, 3, 3, 3], 1, (6, 6)),
            LayerSpec::fully_connected("f", 5, 16),
        ];
        zoo::synthetic_model(&specs, 11).unwrap()
    }

    #[test]
    fn single_zero_stage_is_identity() {
        let model = two_layer();
        let mut ev = DistortionEvaluator::new(&model, 8, 0).unwrap();
        let base = ev.evaluate(&model).unwrap();
        let sched = PruneSchedule::uniform(&[0.0], 2).unwrap();
        let out = iterative_prune(&model, GrainShape::Kernel, &sched, &mut ev).unwrap();
        assert_eq!(out.curve(), vec![(1.0, base)]);
    }

    #[test]
    fn masks_are_nested_across_stages() {
        let model = two_layer();
        let mut ev = DistortionEvaluator::new(&model, 8, 0).unwrap();
        let sched = PruneSchedule::uniform(&[0.3, 0.5], 2).unwrap();
        let out = iterative_prune(&model, GrainShape::Vector, &sched, &mut ev).unwrap();
        for (m1, m2) in out.stages[0].masks.iter().zip(&out.stages[1].masks) {
            for (&k1, &k2) in m1.keep().iter().zip(m2.keep()) {
                assert!(k1 || !k2, "deleted weight revived");
            }
        }
        // FC layer pruned fine-grained
        assert_eq!(out.stages[1].masks[1].shape(), GrainShape::Fine);
    }

    #[test]
    fn densities_match_kept_counts() {
        let model = two_layer();
        let mut ev = DistortionEvaluator::new(&model, 8, 0).unwrap();
        let sched =
            PruneSchedule::new(vec![vec![0.2, 0.5], vec![0.4, 0.6], vec![0.75, 0.9]]).unwrap();
        let out = iterative_prune(&model, GrainShape::Kernel, &sched, &mut ev).unwrap();
        let mut prev = f64::INFINITY;
        for stage in &out.stages {
            let kept = stage.masks[0].keep().iter().filter(|&&k| k).count();
            assert_eq!(stage.density, kept as f64 / 108.0);
            assert!(stage.score <= 0.0 && stage.score <= prev + 1e-12);
            prev = stage.score;
        }
        // 12 kernels: round(0.2*12)=2, round(0.4*12)=5, round(0.75*12)=9 deleted
        let kept: Vec<usize> = out.stages.iter().map(|s| s.masks[0].kept() / 9).collect();
        assert_eq!(kept, vec![10, 7, 3]);
    }

    #[test]
    fn retrain_hook_cannot_revive_weights() {
        struct Revive;
        impl Evaluator for Revive {
            fn evaluate(&mut self, model: &[WeightTensor]) -> Result<f64> {
                Ok(model[0].values().iter().filter(|&&v| v != 0.0).count() as f64)
            }
            fn retrain(
                &mut self,
                model: &mut [WeightTensor],
                _: &[PruneMask],
                _: usize,
            ) -> Result<()> {
                for t in model.iter_mut() {
                    let ones = vec![1.0; t.len()];
                    t.set_values(ones)?;
                }
                Ok(())
            }
        }
        let model = two_layer();
        let sched = PruneSchedule::uniform(&[0.5], 2).unwrap();
        let out = iterative_prune(&model, GrainShape::Fine, &sched, &mut Revive).unwrap();
        assert_eq!(out.stages[0].score, out.stages[0].masks[0].kept() as f64);
    }

    #[test]
    fn non_monotone_schedule_rejected() {
        assert!(matches!(
            PruneSchedule::uniform(&[0.5, 0.3], 2),
            Err(Error::NonMonotoneSchedule { stage: 1, .. })
        ));
        assert!(PruneSchedule::new(vec![vec![0.1, 0.2], vec![0.3]]).is_err());
        assert!(PruneSchedule::uniform(&[1.2], 1).is_err());
        let parsed: std::result::Result<PruneSchedule, _> = serde_json::from_str("[[0.5],[0.1]]");
        assert!(parsed.is_err());
    }
}
