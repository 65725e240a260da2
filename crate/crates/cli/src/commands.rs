use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use grainsparse::pruning::{
    iterative_prune, prune_to_sparsity, schedule_from_sensitivity, sensitivity_scan,
    DistortionEvaluator, PruneSchedule, SensitivityReport,
};
use grainsparse::sim::{
    count_dense_flops, count_flops, load_activations, simulate_model, simulate_model_with,
    MemRefReport,
};
use grainsparse::storage::{
    self, bracket_at_accuracy, encode_with_codebook, quantize, storage_ratio, SparseEncoding,
    StorageReport,
};
use grainsparse::{
    conv_density, load_masks, load_model, save_masks, save_model, write_atomic, zoo, Error,
    GrainShape, LayerSpec, PruneMask, WeightTensor,
};
use serde::{Deserialize, Serialize};

use crate::config::{EvaluatorConfig, ExperimentConfig, ScheduleConfig};
use crate::{Arch, Common, UsageError};

const DEFAULT_SENSITIVITY_GRID: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create directory {}", dir.display()))?;
    }
    write_atomic(path, bytes)?;
    Ok(())
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&common.config, &common.model) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(model)) => ExperimentConfig::for_model(model.clone()),
        (None, None) => return Err(usage("either --config or --model is required")),
    };
    if let Some(model) = &common.model {
        cfg.model = model.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if !common.granularity.is_empty() {
        cfg.granularities = common.granularity.clone();
    }
    if let Some(d) = common.density {
        if !(d > 0.0 && d <= 1.0) {
            return Err(usage(format!("--density {d} must lie in (0, 1]")));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load(cfg: &ExperimentConfig) -> Result<(Vec<WeightTensor>, Vec<LayerSpec>)> {
    let model =
        load_model(&cfg.model).with_context(|| format!("loading {}", cfg.model.display()))?;
    let specs = model.iter().map(|t| t.spec().clone()).collect();
    Ok((model, specs))
}

fn single_shape(cfg: &ExperimentConfig) -> Result<GrainShape> {
    match cfg.granularities.as_slice() {
        [shape] => Ok(*shape),
        _ => Err(usage(
            "this command needs exactly one granularity (use --granularity)",
        )),
    }
}

fn evaluator(cfg: &ExperimentConfig, model: &[WeightTensor]) -> Result<DistortionEvaluator> {
    let EvaluatorConfig::Distortion { batch } = cfg.evaluator;
    Ok(DistortionEvaluator::new(model, batch, cfg.seed)?)
}

/// Every layer pruned once to `density` (FC layers fine-grained).
fn one_shot_masks(
    model: &[WeightTensor],
    shape: GrainShape,
    density: f64,
) -> Result<Vec<PruneMask>> {
    model
        .iter()
        .map(|t| {
            prune_to_sparsity(t, shape.effective_for(t.spec()), 1.0 - density)
                .with_context(|| format!("pruning layer {}", t.name()))
        })
        .collect()
}

fn check_alignment(model: &[WeightTensor], masks: &[PruneMask]) -> Result<(), Error> {
    if masks.len() != model.len() {
        return Err(Error::InvalidArgument(format!(
            "mask file has {} layers, model has {}",
            masks.len(),
            model.len()
        )));
    }
    for (t, m) in model.iter().zip(masks) {
        if m.layer() != t.name() {
            return Err(Error::LayerMismatch {
                expected: t.name().to_string(),
                actual: m.layer().to_string(),
            });
        }
        if m.len() != t.len() {
            return Err(Error::ShapeMismatch {
                layer: t.name().to_string(),
                expected: t.len(),
                actual: m.len(),
                unit: "mask entries",
            });
        }
    }
    Ok(())
}

fn read_masks(path: &Path, model: &[WeightTensor]) -> Result<Vec<PruneMask>> {
    let masks = load_masks(path).with_context(|| format!("loading masks {}", path.display()))?;
    check_alignment(model, &masks).with_context(|| format!("masks {}", path.display()))?;
    Ok(masks)
}

fn obtain_masks(
    common: &Common,
    cfg: &ExperimentConfig,
    model: &[WeightTensor],
    masks: Option<&Path>,
) -> Result<Vec<PruneMask>> {
    match (masks, common.density) {
        (Some(_), Some(_)) => Err(usage("give either --masks or --density, not both")),
        (Some(path), None) => read_masks(path, model),
        (None, Some(d)) => one_shot_masks(model, single_shape(cfg)?, d),
        (None, None) => Err(usage("one of --masks or --density is required")),
    }
}

/// Encode each layer at its mask's own granularity.
fn encode_all(model: &[WeightTensor], masks: &[PruneMask]) -> Result<Vec<SparseEncoding>> {
    model
        .iter()
        .zip(masks)
        .map(|(t, m)| {
            storage::encode(t, m, m.shape()).with_context(|| format!("encoding layer {}", t.name()))
        })
        .collect()
}

fn storage_of(
    model: &[WeightTensor],
    specs: &[LayerSpec],
    masks: &[PruneMask],
) -> Result<StorageReport> {
    Ok(storage_ratio(&encode_all(model, masks)?, specs)?)
}

pub fn synth(arch: Arch, width_div: usize, input: usize, seed: u64, out: &Path) -> Result<()> {
    let specs = match arch {
        Arch::Toy => zoo::toy(),
        Arch::Alexnet => zoo::alexnet(),
        Arch::Vgg16 => {
            if width_div == 0 || input == 0 || !input.is_multiple_of(16) {
                return Err(usage(
                    "--width-div must be >= 1 and --input a positive multiple of 16",
                ));
            }
            zoo::vgg16_scaled(width_div, input)
        }
    };
    let model = zoo::synthetic_model(&specs, seed)?;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let manifest = save_model(out, "model.json", &model)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    stage: usize,
    density: f64,
    score: f64,
    storage_ratio_conv: f64,
    storage_ratio_total: f64,
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))
}

#[derive(Debug, Serialize)]
struct SensitivityRow<'a> {
    layer: &'a str,
    sparsity: f64,
    score: f64,
}

fn write_sensitivity(dir: &Path, report: &SensitivityReport) -> Result<()> {
    let rows: Vec<SensitivityRow> = report
        .layers
        .iter()
        .flat_map(|l| {
            l.points.iter().map(|p| SensitivityRow {
                layer: &l.layer,
                sparsity: p.sparsity,
                score: p.score,
            })
        })
        .collect();
    write_file(&dir.join("sensitivity.csv"), &csv_bytes(&rows)?)?;
    write_file(&dir.join("sensitivity.json"), &json_bytes(report)?)
}

fn schedule_error(e: Error) -> anyhow::Error {
    match e {
        e @ (Error::NonMonotoneSchedule { .. } | Error::OutOfRange { .. }) => {
            usage(format!("invalid schedule: {e}"))
        }
        e => e.into(),
    }
}

pub fn prune(common: &Common) -> Result<()> {
    let cfg = resolve(common)?;
    let (model, specs) = load(&cfg)?;
    for &shape in &cfg.granularities {
        let dir = cfg.out.join(shape.as_str());
        let mut ev = evaluator(&cfg, &model)?;
        let schedule = match (common.density, &cfg.schedule) {
            (Some(d), _) => PruneSchedule::uniform(&[1.0 - d], model.len()),
            (None, ScheduleConfig::Uniform { targets }) => {
                PruneSchedule::uniform(targets, model.len())
            }
            (None, ScheduleConfig::Sensitivity { grid, budgets }) => {
                let report = sensitivity_scan(&model, shape, grid, &mut ev)?;
                write_sensitivity(&dir, &report)?;
                schedule_from_sensitivity(&report, budgets)
            }
        }
        .map_err(schedule_error)?;

        std::fs::create_dir_all(&dir)
            .with_context(|| format!("cannot create directory {}", dir.display()))?;
        let outcome = iterative_prune(&model, shape, &schedule, &mut ev)
            .with_context(|| format!("pruning at {shape} granularity"))?;
        let mut rows = Vec::with_capacity(outcome.stages.len());
        for stage in &outcome.stages {
            let storage = storage_of(&model, &specs, &stage.masks)?;
            rows.push(CurveRow {
                stage: stage.stage,
                density: stage.density,
                score: stage.score,
                storage_ratio_conv: storage.conv.storage_ratio,
                storage_ratio_total: storage.total.storage_ratio,
            });
            save_masks(
                &dir.join(format!("masks_stage{}.json", stage.stage)),
                &stage.masks,
            )?;
        }
        save_masks(&dir.join("masks.json"), outcome.final_masks())?;
        write_file(&dir.join("schedule.json"), &json_bytes(&schedule)?)?;
        write_file(&dir.join("curve.csv"), &csv_bytes(&rows)?)?;
        println!("wrote {}", dir.join("curve.csv").display());
    }
    Ok(())
}

pub fn sensitivity(common: &Common) -> Result<()> {
    let cfg = resolve(common)?;
    let (model, _) = load(&cfg)?;
    let grid: Vec<f64> = match &cfg.schedule {
        ScheduleConfig::Sensitivity { grid, .. } => grid.clone(),
        ScheduleConfig::Uniform { .. } => DEFAULT_SENSITIVITY_GRID.to_vec(),
    };
    for &shape in &cfg.granularities {
        let dir = cfg.out.join(shape.as_str());
        let mut ev = evaluator(&cfg, &model)?;
        let report = sensitivity_scan(&model, shape, &grid, &mut ev)?;
        write_sensitivity(&dir, &report)?;
        println!("wrote {}", dir.join("sensitivity.csv").display());
    }
    Ok(())
}

pub fn encode(common: &Common, masks: Option<&Path>, codebook_bits: Option<u8>) -> Result<()> {
    let cfg = resolve(common)?;
    let (model, _) = load(&cfg)?;
    let masks = obtain_masks(common, &cfg, &model, masks)?;
    let dir = cfg.out.join("encoded");
    for (i, (t, m)) in model.iter().zip(&masks).enumerate() {
        let enc = match codebook_bits {
            None => storage::encode(t, m, m.shape())?,
            Some(bits) => {
                let kept: Vec<f32> = t
                    .values()
                    .iter()
                    .zip(m.keep())
                    .filter(|(_, &k)| k)
                    .map(|(&v, _)| v)
                    .chain(std::iter::once(0.0))
                    .collect();
                let codebook = quantize(&kept, bits, cfg.seed.wrapping_add(i as u64)).map_err(
                    |e| match e {
                        e @ Error::OutOfRange { .. } => usage(format!("--codebook-bits: {e}")),
                        e => e.into(),
                    },
                )?;
                encode_with_codebook(t, m, m.shape(), &codebook)?
            }
        };
        let path = dir.join(format!("{}.gspe", t.name()));
        write_file(&path, &enc.to_bytes())?;
        println!(
            "{} {} stored_grains={} bits={}",
            path.display(),
            enc.granularity,
            enc.stored_grains(),
            enc.bits_total()
        );
    }
    Ok(())
}

pub fn storage_report(common: &Common, masks: Option<&Path>) -> Result<()> {
    let cfg = resolve(common)?;
    let (model, specs) = load(&cfg)?;
    let masks = obtain_masks(common, &cfg, &model, masks)?;
    let report = storage_of(&model, &specs, &masks)?;
    write_file(&cfg.out.join("storage.json"), &report.to_json()?)?;
    write_file(&cfg.out.join("storage.csv"), &report.to_csv()?)?;
    println!(
        "storage ratio conv={} total={}",
        report.conv.storage_ratio, report.total.storage_ratio
    );
    Ok(())
}

fn act_densities(cfg: &ExperimentConfig, flag: &[f64]) -> Result<Vec<f64>> {
    let densities = if flag.is_empty() {
        cfg.sim.act_density.clone()
    } else {
        flag.to_vec()
    };
    if densities.iter().any(|d| !(*d > 0.0 && *d <= 1.0)) {
        return Err(usage("activation densities must lie in (0, 1]"));
    }
    Ok(densities)
}

fn run_sim(
    cfg: &ExperimentConfig,
    model: &[WeightTensor],
    masks: &[PruneMask],
    densities: &[f64],
    activations: Option<&Path>,
) -> Result<MemRefReport> {
    let sim = cfg.sim.sim_config();
    match activations {
        Some(path) => {
            let acts = load_activations(path)
                .with_context(|| format!("loading activations {}", path.display()))?;
            Ok(simulate_model_with(model, masks, &acts, &sim)?)
        }
        None => Ok(simulate_model(model, masks, densities, cfg.seed, &sim)?),
    }
}

pub fn simulate(
    common: &Common,
    masks: Option<&Path>,
    act_density: &[f64],
    activations: Option<PathBuf>,
) -> Result<()> {
    let cfg = resolve(common)?;
    let (model, _) = load(&cfg)?;
    let masks = obtain_masks(common, &cfg, &model, masks)?;
    let densities = act_densities(&cfg, act_density)?;
    let activations = activations.or_else(|| cfg.activations.clone());
    let report = run_sim(&cfg, &model, &masks, &densities, activations.as_deref())?;
    write_file(&cfg.out.join("memref.json"), &report.to_json()?)?;
    write_file(&cfg.out.join("memref.csv"), &report.to_csv()?)?;
    println!(
        "sparse_refs={} dense_baseline_refs={} relative={}",
        report.total.sparse_refs,
        report
            .total
            .dense_baseline_refs
            .map_or_else(|| "-".to_string(), |v| v.to_string()),
        report
            .total
            .relative
            .map_or_else(|| "-".to_string(), |v| v.to_string())
    );
    Ok(())
}

pub fn flops(common: &Common, masks: Option<&Path>) -> Result<()> {
    let cfg = resolve(common)?;
    let report = if masks.is_none() && common.density.is_none() {
        let manifest = grainsparse::load_manifest(&cfg.model)
            .with_context(|| format!("loading {}", cfg.model.display()))?;
        let specs: Vec<LayerSpec> = manifest.specs().cloned().collect();
        count_dense_flops(&specs)
    } else {
        let (model, specs) = load(&cfg)?;
        let masks = obtain_masks(common, &cfg, &model, masks)?;
        count_flops(&specs, &masks)?
    };
    write_file(&cfg.out.join("flops.json"), &report.to_json()?)?;
    write_file(&cfg.out.join("flops.csv"), &report.to_csv()?)?;
    println!(
        "flops={} dense_flops={} ratio={}",
        report.total_flops, report.total_dense_flops, report.ratio
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReportRow {
    granularity: GrainShape,
    density: f64,
    flops_ratio: f64,
    storage_conv: f64,
    storage_total: f64,
    memref_relative: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ReportLayerRow {
    granularity: GrainShape,
    layer: String,
    density: f64,
    flops_ratio: f64,
    storage_ratio: f64,
    memref_relative: Option<f64>,
}

pub fn report(common: &Common, masks_dir: Option<PathBuf>, act_density: &[f64]) -> Result<()> {
    let cfg = resolve(common)?;
    let (model, specs) = load(&cfg)?;
    let densities = act_densities(&cfg, act_density)?;
    let masks_dir = masks_dir.unwrap_or_else(|| cfg.out.clone());
    let mut rows = Vec::new();
    let mut layer_rows = Vec::new();
    for &shape in &cfg.granularities {
        let masks = match common.density {
            Some(d) => one_shot_masks(&model, shape, d)?,
            None => {
                let path = masks_dir.join(shape.as_str()).join("masks.json");
                if !path.is_file() {
                    return Err(Error::InvalidArgument(format!(
                        "missing masks {} (run `prune` first or pass --density)",
                        path.display()
                    ))
                    .into());
                }
                read_masks(&path, &model)?
            }
        };
        let flops = count_flops(&specs, &masks)?;
        let storage = storage_of(&model, &specs, &masks)?;
        let memref = run_sim(&cfg, &model, &masks, &densities, cfg.activations.as_deref())?;
        rows.push(ReportRow {
            granularity: shape,
            density: conv_density(&specs, &masks),
            flops_ratio: flops.ratio,
            storage_conv: storage.conv.storage_ratio,
            storage_total: storage.total.storage_ratio,
            memref_relative: memref.total.relative,
        });
        for ((spec, lf), ls) in specs.iter().zip(&flops.layers).zip(&storage.layers) {
            layer_rows.push(ReportLayerRow {
                granularity: shape,
                layer: spec.name.clone(),
                density: ls.density,
                flops_ratio: if lf.dense_flops > 0 {
                    lf.flops as f64 / lf.dense_flops as f64
                } else {
                    0.0
                },
                storage_ratio: ls.storage_ratio,
                memref_relative: memref
                    .layers
                    .iter()
                    .find(|l| l.layer == spec.name)
                    .and_then(|l| l.relative),
            });
        }
    }
    write_file(&cfg.out.join("report.csv"), &csv_bytes(&rows)?)?;
    write_file(&cfg.out.join("report_layers.csv"), &csv_bytes(&layer_rows)?)?;
    #[derive(Serialize)]
    struct Combined<'a> {
        granularities: &'a [ReportRow],
        layers: &'a [ReportLayerRow],
    }
    write_file(
        &cfg.out.join("report.json"),
        &json_bytes(&Combined {
            granularities: &rows,
            layers: &layer_rows,
        })?,
    )?;
    print!("{}", String::from_utf8(csv_bytes(&rows)?)?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct InterpResult {
    target: f64,
    density: f64,
    storage_ratio_conv: f64,
    storage_ratio_total: f64,
    lower_stage: usize,
    upper_stage: usize,
}

pub fn interp(curve: &Path, accuracy: f64, out: Option<&Path>) -> Result<()> {
    let mut reader = csv::Reader::from_path(curve)
        .with_context(|| format!("reading curve {}", curve.display()))?;
    let rows: Vec<CurveRow> = reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("parsing curve {}", curve.display()))?;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.score, r.density)).collect();
    let b = bracket_at_accuracy(&points, accuracy)
        .with_context(|| format!("interpolating {}", curve.display()))?;
    let col = |f: fn(&CurveRow) -> f64| b.apply(&rows.iter().map(f).collect::<Vec<_>>());
    let result = InterpResult {
        target: accuracy,
        density: col(|r| r.density),
        storage_ratio_conv: col(|r| r.storage_ratio_conv),
        storage_ratio_total: col(|r| r.storage_ratio_total),
        lower_stage: rows[b.lower].stage,
        upper_stage: rows[b.upper].stage,
    };
    let bytes = json_bytes(&result)?;
    if let Some(path) = out {
        write_file(path, &bytes)?;
    }
    print!("{}", String::from_utf8(bytes)?);
    Ok(())
}
