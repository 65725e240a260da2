//! Scatter-add dataflow: sparse weights x sparse activations into a dense output.
//!
//! For each input channel `k`, kept weights are listed in `(c, r, s)` order and
//! nonzero activations in `(x, y)` order. Both lists are cut into blocks of `F`
//! weights and `I` activations, and every block pair forms its `F x I`
//! Cartesian product. A product of weight `(c, k, r, s)` and activation
//! `(x, y)` lands on output `(c, x + pad - r, y + pad - s)`; addresses outside
//! the output are dropped. Products hitting the same address inside one block
//! pair are merged before the accumulator is touched, so each block pair costs
//! one output reference per distinct address.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::activation::ActivationMap;
use crate::error::{Error, Result};
use crate::model::{LayerSpec, PruneMask, WeightTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Weights per group (F).
    #[serde(rename = "F", alias = "weights_per_group")]
    pub weights_per_group: usize,
    /// Activations per group (I).
    #[serde(rename = "I", alias = "acts_per_group")]
    pub acts_per_group: usize,
    #[serde(default = "default_true")]
    pub count_dense_baseline: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            weights_per_group: 4,
            acts_per_group: 4,
            count_dense_baseline: true,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.weights_per_group == 0 || self.acts_per_group == 0 {
            return Err(Error::InvalidArgument(
                "group sizes F and I must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMemRef {
    pub layer: String,
    pub weight_density: f64,
    pub act_density: f64,
    /// All weight x activation products formed.
    pub products: u64,
    /// Products whose output address is inside the output map.
    pub valid_products: u64,
    /// Output references after same-address bypass.
    pub sparse_refs: u64,
    /// References with every weight kept, same activations.
    pub dense_baseline_refs: Option<u64>,
    pub relative: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedLayer {
    pub layer: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemRefTotals {
    pub products: u64,
    pub valid_products: u64,
    pub sparse_refs: u64,
    pub dense_baseline_refs: Option<u64>,
    pub relative: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemRefReport {
    pub config: SimConfig,
    pub layers: Vec<LayerMemRef>,
    pub skipped: Vec<SkippedLayer>,
    pub total: MemRefTotals,
}

/// Dense `C x H_out x W_out` accumulator contents.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct WeightEntry {
    c: u32,
    r: u32,
    s: u32,
    value: f32,
}

#[derive(Debug, Default, Clone, Copy)]
struct Counts {
    products: u64,
    valid: u64,
    refs: u64,
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts {
            products: self.products + o.products,
            valid: self.valid + o.valid,
            refs: self.refs + o.refs,
        }
    }
}

struct Geometry {
    pad: i64,
    out_h: i64,
    out_w: i64,
}

impl Geometry {
    #[inline]
    fn address(&self, w: &WeightEntry, x: u32, y: u32) -> Option<usize> {
        let ox = x as i64 + self.pad - w.r as i64;
        let oy = y as i64 + self.pad - w.s as i64;
        if ox < 0 || oy < 0 || ox >= self.out_h || oy >= self.out_w {
            return None;
        }
        Some(((w.c as i64 * self.out_h + ox) * self.out_w + oy) as usize)
    }
}

fn weights_of_channel(
    spec: &LayerSpec,
    values: &[f32],
    keep: Option<&[bool]>,
    k: usize,
) -> Vec<WeightEntry> {
    let mut out = Vec::new();
    for c in 0..spec.out_channels {
        for r in 0..spec.kernel_h {
            for s in 0..spec.kernel_w {
                let i = spec.offset(c, k, r, s);
                if keep.is_none_or(|m| m[i]) {
                    out.push(WeightEntry {
                        c: c as u32,
                        r: r as u32,
                        s: s as u32,
                        value: values[i],
                    });
                }
            }
        }
    }
    out
}

fn run_channel(
    geo: &Geometry,
    weights: &[WeightEntry],
    acts: &[super::ActEntry],
    cfg: &SimConfig,
    mut output: Option<&mut [f64]>,
) -> Counts {
    let mut counts = Counts::default();
    let mut seen: Vec<usize> = Vec::with_capacity(cfg.weights_per_group * cfg.acts_per_group);
    for wb in weights.chunks(cfg.weights_per_group) {
        for ab in acts.chunks(cfg.acts_per_group) {
            seen.clear();
            counts.products += (wb.len() * ab.len()) as u64;
            for w in wb {
                for a in ab {
                    if let Some(addr) = geo.address(w, a.x, a.y) {
                        seen.push(addr);
                        if let Some(out) = output.as_deref_mut() {
                            out[addr] += w.value as f64 * a.value as f64;
                        }
                    }
                }
            }
            counts.valid += seen.len() as u64;
            seen.sort_unstable();
            seen.dedup();
            counts.refs += seen.len() as u64;
        }
    }
    counts
}

fn check_inputs(tensor: &WeightTensor, mask: &PruneMask, acts: &ActivationMap) -> Result<()> {
    let spec = tensor.spec();
    if spec.stride != 1 {
        return Err(Error::UnsupportedStride {
            layer: spec.name.clone(),
            stride: spec.stride,
        });
    }
    if mask.layer() != spec.name {
        return Err(Error::LayerMismatch {
            expected: spec.name.clone(),
            actual: mask.layer().to_string(),
        });
    }
    if mask.len() != tensor.len() {
        return Err(Error::ShapeMismatch {
            layer: spec.name.clone(),
            expected: tensor.len(),
            actual: mask.len(),
            unit: "mask entries",
        });
    }
    if acts.channels() != spec.in_channels
        || acts.height() != spec.input_h
        || acts.width() != spec.input_w
    {
        return Err(Error::invalid_layer(
            &spec.name,
            format!(
                "activation map {}x{}x{} does not match input {}x{}x{}",
                acts.channels(),
                acts.height(),
                acts.width(),
                spec.in_channels,
                spec.input_h,
                spec.input_w
            ),
        ));
    }
    Ok(())
}

fn count_layer(
    tensor: &WeightTensor,
    keep: Option<&[bool]>,
    acts: &ActivationMap,
    cfg: &SimConfig,
) -> Counts {
    let spec = tensor.spec();
    let (out_h, out_w) = spec.output_hw();
    let geo = Geometry {
        pad: spec.pad as i64,
        out_h: out_h as i64,
        out_w: out_w as i64,
    };
    (0..spec.in_channels)
        .into_par_iter()
        .map(|k| {
            let weights = weights_of_channel(spec, tensor.values(), keep, k);
            run_channel(&geo, &weights, acts.channel(k), cfg, None)
        })
        .reduce(Counts::default, |a, b| a + b)
}

fn layer_report(
    tensor: &WeightTensor,
    mask: &PruneMask,
    acts: &ActivationMap,
    cfg: &SimConfig,
    sparse: Counts,
) -> LayerMemRef {
    let dense_baseline_refs = cfg
        .count_dense_baseline
        .then(|| count_layer(tensor, None, acts, cfg).refs);
    LayerMemRef {
        layer: tensor.name().to_string(),
        weight_density: mask.density(),
        act_density: acts.density(),
        products: sparse.products,
        valid_products: sparse.valid,
        sparse_refs: sparse.refs,
        dense_baseline_refs,
        relative: dense_baseline_refs
            .filter(|&d| d > 0)
            .map(|d| sparse.refs as f64 / d as f64),
    }
}

/// Simulate one stride-1 layer; returns the reference counts and the accumulated output.
pub fn simulate_layer(
    tensor: &WeightTensor,
    mask: &PruneMask,
    acts: &ActivationMap,
    cfg: &SimConfig,
) -> Result<(LayerMemRef, OutputMap)> {
    cfg.validate()?;
    check_inputs(tensor, mask, acts)?;
    let spec = tensor.spec();
    let (out_h, out_w) = spec.output_hw();
    let geo = Geometry {
        pad: spec.pad as i64,
        out_h: out_h as i64,
        out_w: out_w as i64,
    };
    let mut output = vec![0.0f64; spec.out_channels * out_h * out_w];
    let mut counts = Counts::default();
    for k in 0..spec.in_channels {
        let weights = weights_of_channel(spec, tensor.values(), Some(mask.keep()), k);
        counts = counts + run_channel(&geo, &weights, acts.channel(k), cfg, Some(&mut output));
    }
    let report = layer_report(tensor, mask, acts, cfg, counts);
    Ok((
        report,
        OutputMap {
            channels: spec.out_channels,
            height: out_h,
            width: out_w,
            values: output,
        },
    ))
}

fn skip_reason(spec: &LayerSpec) -> Option<String> {
    if !spec.is_conv() {
        Some("fully-connected layer".into())
    } else if spec.stride != 1 {
        Some(format!(
            "stride {} (simulator handles stride 1)",
            spec.stride
        ))
    } else {
        None
    }
}

/// Simulate every stride-1 conv layer with the given activation maps (keyed by layer).
pub fn simulate_model_with(
    model: &[WeightTensor],
    masks: &[PruneMask],
    acts: &BTreeMap<String, ActivationMap>,
    cfg: &SimConfig,
) -> Result<MemRefReport> {
    cfg.validate()?;
    if model.len() != masks.len() {
        return Err(Error::InvalidArgument(format!(
            "{} masks for {} layers",
            masks.len(),
            model.len()
        )));
    }
    let mut skipped = Vec::new();
    let mut jobs = Vec::new();
    for (tensor, mask) in model.iter().zip(masks) {
        if let Some(reason) = skip_reason(tensor.spec()) {
            skipped.push(SkippedLayer {
                layer: tensor.name().to_string(),
                reason,
            });
            continue;
        }
        let map = acts.get(tensor.name()).ok_or_else(|| {
            Error::invalid_layer(tensor.name(), "no activation map for simulated layer")
        })?;
        check_inputs(tensor, mask, map)?;
        jobs.push((tensor, mask, map));
    }
    let layers: Vec<LayerMemRef> = jobs
        .par_iter()
        .map(|&(tensor, mask, map)| {
            let counts = count_layer(tensor, Some(mask.keep()), map, cfg);
            layer_report(tensor, mask, map, cfg, counts)
        })
        .collect();

    let dense_baseline_refs = cfg.count_dense_baseline.then(|| {
        layers
            .iter()
            .filter_map(|l| l.dense_baseline_refs)
            .sum::<u64>()
    });
    let sparse_refs = layers.iter().map(|l| l.sparse_refs).sum();
    let total = MemRefTotals {
        products: layers.iter().map(|l| l.products).sum(),
        valid_products: layers.iter().map(|l| l.valid_products).sum(),
        sparse_refs,
        dense_baseline_refs,
        relative: dense_baseline_refs
            .filter(|&d| d > 0)
            .map(|d| sparse_refs as f64 / d as f64),
    };
    Ok(MemRefReport {
        config: *cfg,
        layers,
        skipped,
        total,
    })
}

/// Seeded random activations for every simulated layer.
///
/// `act_densities` has one entry per model layer, or a single entry used for all.
pub fn generate_activations(
    model: &[WeightTensor],
    act_densities: &[f64],
    seed: u64,
) -> Result<BTreeMap<String, ActivationMap>> {
    if act_densities.len() != 1 && act_densities.len() != model.len() {
        return Err(Error::InvalidArgument(format!(
            "{} activation densities for {} layers",
            act_densities.len(),
            model.len()
        )));
    }
    let mut maps = BTreeMap::new();
    for (i, tensor) in model.iter().enumerate() {
        let spec = tensor.spec();
        if skip_reason(spec).is_some() {
            continue;
        }
        let density = act_densities[if act_densities.len() == 1 { 0 } else { i }];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let map = ActivationMap::random(
            spec.in_channels,
            spec.input_h,
            spec.input_w,
            density,
            &mut rng,
        )?;
        maps.insert(spec.name.clone(), map);
    }
    Ok(maps)
}

/// Simulate every stride-1 conv layer on seeded random activations.
pub fn simulate_model(
    model: &[WeightTensor],
    masks: &[PruneMask],
    act_densities: &[f64],
    seed: u64,
    cfg: &SimConfig,
) -> Result<MemRefReport> {
    let acts = generate_activations(model, act_densities, seed)?;
    simulate_model_with(model, masks, &acts, cfg)
}

impl MemRefReport {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        let optf = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "layer",
            "weight_density",
            "act_density",
            "products",
            "valid_products",
            "sparse_refs",
            "dense_baseline_refs",
            "relative",
        ])?;
        for l in &self.layers {
            w.write_record([
                l.layer.clone(),
                l.weight_density.to_string(),
                l.act_density.to_string(),
                l.products.to_string(),
                l.valid_products.to_string(),
                l.sparse_refs.to_string(),
                opt(l.dense_baseline_refs),
                optf(l.relative),
            ])?;
        }
        let t = &self.total;
        w.write_record([
            "total".to_string(),
            String::new(),
            String::new(),
            t.products.to_string(),
            t.valid_products.to_string(),
            t.sparse_refs.to_string(),
            opt(t.dense_baseline_refs),
            optf(t.relative),
        ])?;
        w.into_inner()
            .map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}
