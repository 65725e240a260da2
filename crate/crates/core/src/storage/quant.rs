//! 8-bit value codes: linear min-max codes and k-means codebooks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Affine 8-bit quantizer whose range always contains 0, so that 0.0 has an
/// exact code (`zero_point`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearQuantizer {
    pub scale: f32,
    pub zero_point: u8,
}

impl LinearQuantizer {
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a f32>) -> Self {
        let (mut lo, mut hi) = (0.0f32, 0.0f32);
        for &v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let span = (hi as f64) - (lo as f64);
        let scale = if span > 0.0 {
            (span / 255.0) as f32
        } else {
            1.0
        };
        let zero_point = (-(lo as f64) / scale as f64).round().clamp(0.0, 255.0) as u8;
        LinearQuantizer { scale, zero_point }
    }

    #[inline]
    pub fn code(&self, v: f32) -> u8 {
        ((v as f64 / self.scale as f64).round() + self.zero_point as f64).clamp(0.0, 255.0) as u8
    }

    #[inline]
    pub fn value(&self, code: u8) -> f32 {
        ((code as f64 - self.zero_point as f64) * self.scale as f64) as f32
    }
}

/// k-means codebook over a set of values.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub n_bits: u8,
    /// `2^n_bits` centers, ascending.
    pub centers: Vec<f32>,
    /// Center index of each input value.
    pub assignment: Vec<u8>,
    /// Mean squared reconstruction error.
    pub mse: f64,
}

impl Codebook {
    /// Index of the nearest center; ties go to the lower index.
    pub fn nearest(&self, v: f32) -> u8 {
        nearest_sorted(&to_f64(&self.centers), v as f64) as u8
    }

    pub fn value(&self, code: u8) -> f32 {
        self.centers[code as usize]
    }
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Nearest entry of an ascending slice, lower index on ties.
fn nearest_sorted(centers: &[f64], v: f64) -> usize {
    let hi = centers.partition_point(|&c| c < v);
    if hi == 0 {
        return 0;
    }
    if hi == centers.len() {
        return centers.len() - 1;
    }
    let lo = hi - 1;
    // first index of the run equal to centers[lo]
    let lo = centers[..=lo].partition_point(|&c| c < centers[lo]);
    if v - centers[lo] <= centers[hi] - v {
        lo
    } else {
        hi
    }
}

const MAX_ITERS: usize = 50;
const REL_TOL: f64 = 1e-6;

/// 1-D k-means with `2^n_bits` centers, k-means++ seeding and Lloyd iterations
/// (50 at most, or until no center moves more than 1e-6 of the value range).
pub fn quantize(values: &[f32], n_bits: u8, seed: u64) -> Result<Codebook> {
    if !(1..=8).contains(&n_bits) {
        return Err(Error::OutOfRange {
            what: "n_bits",
            value: n_bits as f64,
            range: "[1, 8]",
        });
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot quantize an empty value set".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "cannot quantize non-finite values".into(),
        ));
    }
    let k = 1usize << n_bits;
    let data = to_f64(values);

    let mut distinct = data.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();

    let centers = if distinct.len() <= k {
        let last = *distinct.last().unwrap();
        distinct.resize(k, last);
        distinct
    } else {
        lloyd(
            &data,
            kmeans_pp(&data, k, seed),
            distinct[distinct.len() - 1] - distinct[0],
        )
    };

    let assignment: Vec<u8> = data
        .iter()
        .map(|&v| nearest_sorted(&centers, v) as u8)
        .collect();
    let mse = data
        .iter()
        .zip(&assignment)
        .map(|(&v, &a)| {
            let d = v - centers[a as usize];
            d * d
        })
        .sum::<f64>()
        / data.len() as f64;
    Ok(Codebook {
        n_bits,
        centers: centers.iter().map(|&c| c as f32).collect(),
        assignment,
        mse,
    })
}

fn kmeans_pp(data: &[f64], k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(k);
    centers.push(data[rng.random_range(0..data.len())]);
    let mut d2: Vec<f64> = data.iter().map(|&v| (v - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let threshold = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = data.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > threshold {
                    pick = i;
                    break;
                }
            }
            data[pick]
        } else {
            data[rng.random_range(0..data.len())]
        };
        centers.push(next);
        for (d, &v) in d2.iter_mut().zip(data) {
            *d = d.min((v - next).powi(2));
        }
    }
    centers.sort_by(f64::total_cmp);
    centers
}

fn lloyd(data: &[f64], mut centers: Vec<f64>, range: f64) -> Vec<f64> {
    let k = centers.len();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for _ in 0..MAX_ITERS {
        sums.fill(0.0);
        counts.fill(0);
        for &v in data {
            let c = nearest_sorted(&centers, v);
            sums[c] += v;
            counts[c] += 1;
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] > 0 {
                let updated = sums[c] / counts[c] as f64;
                shift = shift.max((updated - centers[c]).abs());
                centers[c] = updated;
            }
        }
        centers.sort_by(f64::total_cmp);
        if shift <= REL_TOL * range {
            break;
        }
    }
    centers
}
