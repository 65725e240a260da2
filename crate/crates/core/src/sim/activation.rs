use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::io::decode_f32_blob;

/// One nonzero input activation at row `x`, column `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActEntry {
    pub x: u32,
    pub y: u32,
    pub value: f32,
}

/// Sparse input activations, one `(x, y)`-ordered nonzero list per input channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    channels: usize,
    height: usize,
    width: usize,
    entries: Vec<Vec<ActEntry>>,
}

impl ActivationMap {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        entries: Vec<Vec<ActEntry>>,
    ) -> Result<Self> {
        if entries.len() != channels {
            return Err(Error::InvalidArgument(format!(
                "activation map has {} channel lists for {channels} channels",
                entries.len()
            )));
        }
        for (k, list) in entries.iter().enumerate() {
            for (i, e) in list.iter().enumerate() {
                if e.x as usize >= height || e.y as usize >= width {
                    return Err(Error::InvalidArgument(format!(
                        "activation ({}, {}) in channel {k} outside {height}x{width}",
                        e.x, e.y
                    )));
                }
                if i > 0 && (list[i - 1].x, list[i - 1].y) >= (e.x, e.y) {
                    return Err(Error::InvalidArgument(format!(
                        "channel {k} activations are not strictly increasing in (x, y)"
                    )));
                }
            }
        }
        Ok(ActivationMap {
            channels,
            height,
            width,
            entries,
        })
    }

    /// From a dense `[k][x][y]` array; zeros are absent.
    pub fn from_dense(channels: usize, height: usize, width: usize, dense: &[f32]) -> Result<Self> {
        if dense.len() != channels * height * width {
            return Err(Error::InvalidArgument(format!(
                "dense activation length {} != {channels}x{height}x{width}",
                dense.len()
            )));
        }
        let plane = height * width;
        let entries = (0..channels)
            .map(|k| {
                dense[k * plane..(k + 1) * plane]
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(i, &value)| ActEntry {
                        x: (i / width) as u32,
                        y: (i % width) as u32,
                        value,
                    })
                    .collect()
            })
            .collect();
        Self::new(channels, height, width, entries)
    }

    pub fn empty(channels: usize, height: usize, width: usize) -> Self {
        ActivationMap {
            channels,
            height,
            width,
            entries: vec![Vec::new(); channels],
        }
    }

    /// Exactly `round(density * K*H*W)` nonzeros placed uniformly, values from N(0, 1).
    pub fn random<R: Rng + ?Sized>(
        channels: usize,
        height: usize,
        width: usize,
        density: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(density > 0.0 && density <= 1.0) {
            return Err(Error::OutOfRange {
                what: "activation density",
                value: density,
                range: "(0, 1]",
            });
        }
        let total = channels * height * width;
        let nnz = ((density * total as f64).round() as usize).min(total);
        let mut picks = sample(rng, total, nnz).into_vec();
        picks.sort_unstable();
        let plane = height * width;
        let mut entries = vec![Vec::new(); channels];
        for idx in picks {
            let value: f64 = StandardNormal.sample(rng);
            let rem = idx % plane;
            entries[idx / plane].push(ActEntry {
                x: (rem / width) as u32,
                y: (rem % width) as u32,
                value: value as f32,
            });
        }
        Ok(ActivationMap {
            channels,
            height,
            width,
            entries,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channel(&self, k: usize) -> &[ActEntry] {
        &self.entries[k]
    }

    pub fn nnz(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.channels * self.height * self.width) as f64
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.channels * plane];
        for (k, list) in self.entries.iter().enumerate() {
            for e in list {
                out[k * plane + e.x as usize * self.width + e.y as usize] = e.value;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ActivationRecord {
    layer: String,
    #[serde(rename = "K")]
    channels: usize,
    #[serde(rename = "H")]
    height: usize,
    #[serde(rename = "W")]
    width: usize,
    file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ActivationManifest {
    activations: Vec<ActivationRecord>,
}

/// Load activation maps keyed by layer name from
/// `{"activations": [{"layer", "K", "H", "W", "file"}]}` with dense float32 LE blobs.
pub fn load_activations(manifest_path: &Path) -> Result<BTreeMap<String, ActivationMap>> {
    let bytes = std::fs::read(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: ActivationManifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::Manifest {
            path: manifest_path.to_path_buf(),
            message: e.to_string(),
        })?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .activations
        .into_iter()
        .map(|rec| {
            let path = dir.join(&rec.file);
            let blob = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let dense = decode_f32_blob(&rec.layer, &blob, rec.channels * rec.height * rec.width)?;
            let map = ActivationMap::from_dense(rec.channels, rec.height, rec.width, &dense)?;
            Ok((rec.layer, map))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_round_trip() {
        let dense = vec![0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 3.0, 0.0];
        let m = ActivationMap::from_dense(2, 2, 2, &dense).unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(
            m.channel(0)[1],
            ActEntry {
                x: 1,
                y: 1,
                value: 2.0
            }
        );
        assert_eq!(m.to_dense(), dense);
        assert_eq!(m.density(), 3.0 / 8.0);
    }

    #[test]
    fn rejects_unsorted_or_out_of_range() {
        let e = |x, y| ActEntry { x, y, value: 1.0 };
        assert!(ActivationMap::new(1, 3, 3, vec![vec![e(1, 0), e(0, 2)]]).is_err());
        assert!(ActivationMap::new(1, 3, 3, vec![vec![e(0, 1), e(0, 1)]]).is_err());
        assert!(ActivationMap::new(1, 3, 3, vec![vec![e(3, 0)]]).is_err());
        assert!(ActivationMap::new(1, 3, 3, vec![vec![e(0, 1), e(2, 0)]]).is_ok());
    }

    #[test]
    fn random_hits_exact_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = ActivationMap::random(4, 10, 10, 0.35, &mut rng).unwrap();
        assert_eq!(m.nnz(), 140);
        let m = ActivationMap::random(4, 10, 10, 1.0, &mut rng).unwrap();
        assert_eq!(m.nnz(), 400);
        assert!(ActivationMap::random(4, 10, 10, 0.0, &mut rng).is_err());
        assert!(ActivationMap::random(4, 10, 10, 1.1, &mut rng).is_err());
    }

    #[test]
    fn loads_from_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let dense: Vec<f32> = vec![0.0, 0.5, 0.0, 0.0, 1.5, 0.0];
        let blob: Vec<u8> = dense.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(dir.path().join("a.bin"), blob).unwrap();
        let path = dir.path().join("acts.json");
        std::fs::write(
            &path,
            r#"{"activations":[{"layer":"conv1","K":1,"H":2,"W":3,"file":"a.bin"}]}"#,
        )
        .unwrap();
        let maps = load_activations(&path).unwrap();
        assert_eq!(maps["conv1"].to_dense(), dense);
    }
}
