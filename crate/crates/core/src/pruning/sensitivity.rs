use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_fraction, prune_to_sparsity, Evaluator, PruneSchedule};
use crate::error::{Error, Result};
use crate::model::{apply_mask, GrainShape, WeightTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub sparsity: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSensitivity {
    pub layer: String,
    pub points: Vec<SensitivityPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub granularity: GrainShape,
    pub layers: Vec<LayerSensitivity>,
}

impl SensitivityReport {
    pub fn entry_count(&self) -> usize {
        self.layers.iter().map(|l| l.points.len()).sum()
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("sparsity grid is empty".into()));
    }
    for &s in grid {
        if !(0.0..1.0).contains(&s) {
            return Err(Error::OutOfRange {
                what: "grid sparsity",
                value: s,
                range: "[0, 1)",
            });
        }
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "sparsity grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Prune each layer alone at every grid sparsity and record the evaluator's score.
///
/// FC layers are pruned fine-grained whatever `shape` is.
pub fn sensitivity_scan(
    model: &[WeightTensor],
    shape: GrainShape,
    grid: &[f64],
    eval: &mut dyn Evaluator,
) -> Result<SensitivityReport> {
    check_grid(grid)?;
    let mut layers = Vec::with_capacity(model.len());
    let mut working = model.to_vec();
    for (i, tensor) in model.iter().enumerate() {
        let layer_shape = shape.effective_for(tensor.spec());
        let mut points = Vec::with_capacity(grid.len());
        for &sparsity in grid {
            let wrap = |e: Error| Error::Evaluation {
                layer: tensor.name().to_string(),
                sparsity,
                source: Box::new(e),
            };
            let mask = prune_to_sparsity(tensor, layer_shape, sparsity)?;
            working[i] = apply_mask(tensor, &mask)?;
            let score = eval.evaluate(&working).map_err(wrap)?;
            points.push(SensitivityPoint { sparsity, score });
        }
        working[i] = tensor.clone();
        layers.push(LayerSensitivity {
            layer: tensor.name().to_string(),
            points,
        });
    }
    Ok(SensitivityReport {
        granularity: shape,
        layers,
    })
}

/// Per layer, the largest grid sparsity whose score drop from the 0-sparsity
/// anchor is at most `budget` (0 if none qualifies).
pub fn plan_stage(report: &SensitivityReport, budget: f64) -> Result<BTreeMap<String, f64>> {
    if budget.is_nan() || budget < 0.0 {
        return Err(Error::OutOfRange {
            what: "budget",
            value: budget,
            range: "[0, inf)",
        });
    }
    report
        .layers
        .iter()
        .map(|layer| {
            let anchor = layer
                .points
                .iter()
                .find(|p| p.sparsity == 0.0)
                .ok_or_else(|| Error::MissingAnchor {
                    layer: layer.layer.clone(),
                })?
                .score;
            let chosen = layer
                .points
                .iter()
                .filter(|p| anchor - p.score <= budget)
                .map(|p| p.sparsity)
                .fold(0.0, f64::max);
            Ok((layer.layer.clone(), chosen))
        })
        .collect()
}

/// One stage per budget (ascending), each planned from the same report.
/// Per-layer targets are made monotone with a running maximum.
pub fn schedule_from_sensitivity(
    report: &SensitivityReport,
    budgets: &[f64],
) -> Result<PruneSchedule> {
    let mut stages: Vec<Vec<f64>> = Vec::with_capacity(budgets.len());
    for &budget in budgets {
        let plan = plan_stage(report, budget)?;
        let mut targets: Vec<f64> = report.layers.iter().map(|l| plan[&l.layer]).collect();
        if let Some(prev) = stages.last() {
            for (t, p) in targets.iter_mut().zip(prev) {
                *t = t.max(*p);
            }
        }
        for &t in &targets {
            check_fraction("stage target", t)?;
        }
        stages.push(targets);
    }
    PruneSchedule::new(stages)
}
