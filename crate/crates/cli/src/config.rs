//! Experiment configuration file.
//!
//! ```json
//! {
//!   "model": "model/model.json",
//!   "granularities": ["fine", "vector", "kernel", "filter"],
//!   "schedule": { "kind": "uniform", "targets": [0.3, 0.5, 0.7] },
//!   "evaluator": { "kind": "distortion", "batch": 64 },
//!   "seed": 7,
//!   "sim": { "F": 4, "I": 4, "act_density": [0.35], "count_dense_baseline": true },
//!   "activations": null,
//!   "out": "runs/toy"
//! }
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.
//! A sensitivity-derived schedule uses
//! `{ "kind": "sensitivity", "grid": [0.0, 0.2, ...], "budgets": [0.02, 0.05] }`.

use std::path::{Path, PathBuf};

use grainsparse::sim::SimConfig;
use grainsparse::GrainShape;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScheduleConfig {
    /// Same target sparsity for every layer at each stage.
    Uniform { targets: Vec<f64> },
    /// One stage per distortion budget, planned from a per-layer sensitivity scan.
    Sensitivity { grid: Vec<f64>, budgets: Vec<f64> },
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig::Uniform {
            targets: vec![0.2, 0.4, 0.6, 0.7, 0.8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EvaluatorConfig {
    Distortion {
        #[serde(default = "default_batch")]
        batch: usize,
    },
}

fn default_batch() -> usize {
    grainsparse::pruning::DistortionEvaluator::DEFAULT_BATCH
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig::Distortion {
            batch: default_batch(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(rename = "F", default = "four")]
    pub weights_per_group: usize,
    #[serde(rename = "I", default = "four")]
    pub acts_per_group: usize,
    #[serde(default = "default_act_density")]
    pub act_density: Vec<f64>,
    #[serde(default = "yes")]
    pub count_dense_baseline: bool,
}

fn four() -> usize {
    4
}

fn yes() -> bool {
    true
}

fn default_act_density() -> Vec<f64> {
    vec![0.35]
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            weights_per_group: 4,
            acts_per_group: 4,
            act_density: default_act_density(),
            count_dense_baseline: true,
        }
    }
}

impl SimSection {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            weights_per_group: self.weights_per_group,
            acts_per_group: self.acts_per_group,
            count_dense_baseline: self.count_dense_baseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: PathBuf,
    #[serde(default = "all_shapes")]
    pub granularities: Vec<GrainShape>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub evaluator: EvaluatorConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub activations: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn all_shapes() -> Vec<GrainShape> {
    GrainShape::ALL.to_vec()
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// A config with defaults around a model manifest (used when no file is given).
    pub fn for_model(model: PathBuf) -> Self {
        ExperimentConfig {
            model,
            granularities: all_shapes(),
            schedule: ScheduleConfig::default(),
            evaluator: EvaluatorConfig::default(),
            seed: 0,
            sim: SimSection::default(),
            activations: None,
            out: default_out(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.model = base.join(&cfg.model);
        cfg.out = base.join(&cfg.out);
        cfg.activations = cfg.activations.map(|p| base.join(p));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        if !self.model.is_file() {
            return Err(UsageError(format!(
                "model manifest {} does not exist",
                self.model.display()
            )));
        }
        if let Some(acts) = &self.activations {
            if !acts.is_file() {
                return Err(UsageError(format!(
                    "activation manifest {} does not exist",
                    acts.display()
                )));
            }
        }
        if self.granularities.is_empty() {
            return Err(UsageError("granularity list is empty".into()));
        }
        let grid_ok = |g: &[f64]| g.iter().all(|s| (0.0..1.0).contains(s));
        match &self.schedule {
            ScheduleConfig::Uniform { targets } => {
                if targets.is_empty() || !grid_ok(targets) {
                    return Err(UsageError(
                        "schedule targets must be non-empty and in [0, 1)".into(),
                    ));
                }
            }
            ScheduleConfig::Sensitivity { grid, budgets } => {
                if grid.is_empty() || !grid_ok(grid) {
                    return Err(UsageError(
                        "sensitivity grid must be non-empty and in [0, 1)".into(),
                    ));
                }
                if budgets.is_empty() || budgets.iter().any(|b| b.is_nan() || *b < 0.0) {
                    return Err(UsageError(
                        "sensitivity budgets must be non-empty and >= 0".into(),
                    ));
                }
            }
        }
        let EvaluatorConfig::Distortion { batch } = self.evaluator;
        if batch == 0 {
            return Err(UsageError("evaluator batch must be >= 1".into()));
        }
        if self.sim.weights_per_group == 0 || self.sim.acts_per_group == 0 {
            return Err(UsageError("sim F and I must be >= 1".into()));
        }
        if self.sim.act_density.is_empty()
            || self
                .sim
                .act_density
                .iter()
                .any(|d| !(*d > 0.0 && *d <= 1.0))
        {
            return Err(UsageError("activation densities must lie in (0, 1]".into()));
        }
        Ok(())
    }
}
