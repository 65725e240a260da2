//! Grain-shared relative index encoding.
//!
//! Grains are scanned in partition order. Every stored grain contributes one
//! 4-bit index, the number of deleted grains skipped since the previous stored
//! grain, and one 8-bit code per weight. When more than 15 grains would be
//! skipped, a zero-valued padding grain is stored 16 positions after the
//! previous one (index 15) and scanning continues from there.
//!
//! Binary container (little-endian):
//!
//! ```text
//! "GSPE" | version u8 | granularity u8 | coding u8 | reserved u8
//! C u32 | K u32 | R u32 | S u32 | stored_grains u32 | padding_grains u32
//! name_len u16 | name bytes
//! coding = 0: scale f32 | zero_point u8
//! coding = 1: n_centers u16 | centers f32 * n_centers
//! index stream: ceil(stored/2) bytes, entry i in byte i/2, low nibble first
//! value stream: stored * grain_size bytes
//! ```

use std::path::Path;

use super::quant::{Codebook, LinearQuantizer};
use crate::error::{Error, Result};
use crate::model::{GrainPartition, GrainShape, LayerSpec, PruneMask, WeightTensor};
use crate::util::write_atomic;

pub const MAX_GAP: u8 = 15;
const MAGIC: &[u8; 4] = b"GSPE";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ValueCoding {
    Linear(LinearQuantizer),
    Codebook(Vec<f32>),
}

impl ValueCoding {
    fn value(&self, code: u8) -> Result<f32> {
        match self {
            ValueCoding::Linear(q) => Ok(q.value(code)),
            ValueCoding::Codebook(centers) => centers
                .get(code as usize)
                .copied()
                .ok_or_else(|| Error::Corrupt(format!("code {code} outside codebook"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseEncoding {
    pub layer: String,
    pub dims: [usize; 4],
    pub granularity: GrainShape,
    pub grain_size: usize,
    /// One relative index per stored grain, each in `0..=15`.
    pub indices: Vec<u8>,
    /// `grain_size` codes per stored grain.
    pub values: Vec<u8>,
    pub padding_grains: usize,
    pub coding: ValueCoding,
}

impl SparseEncoding {
    pub fn stored_grains(&self) -> usize {
        self.indices.len()
    }

    pub fn kept_grains(&self) -> usize {
        self.indices.len() - self.padding_grains
    }

    pub fn bits_values(&self) -> u64 {
        8 * self.values.len() as u64
    }

    pub fn bits_indices(&self) -> u64 {
        4 * self.indices.len() as u64
    }

    pub fn bits_total(&self) -> u64 {
        self.bits_values() + self.bits_indices()
    }

    pub fn param_count(&self) -> usize {
        self.dims.iter().product()
    }

    fn grain_count(&self) -> usize {
        self.param_count() / self.grain_size
    }

    /// Serialize to the binary container.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.values.len() + self.indices.len() / 2);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.granularity.code());
        out.push(match self.coding {
            ValueCoding::Linear(_) => 0,
            ValueCoding::Codebook(_) => 1,
        });
        out.push(0);
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.indices.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.padding_grains as u32).to_le_bytes());
        out.extend_from_slice(&(self.layer.len() as u16).to_le_bytes());
        out.extend_from_slice(self.layer.as_bytes());
        match &self.coding {
            ValueCoding::Linear(q) => {
                out.extend_from_slice(&q.scale.to_le_bytes());
                out.push(q.zero_point);
            }
            ValueCoding::Codebook(centers) => {
                out.extend_from_slice(&(centers.len() as u16).to_le_bytes());
                for c in centers {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
        for pair in self.indices.chunks(2) {
            let hi = pair.get(1).copied().unwrap_or(0);
            out.push(pair[0] | (hi << 4));
        }
        out.extend_from_slice(&self.values);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Corrupt("bad magic".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::Corrupt(format!("unsupported version {version}")));
        }
        let granularity = GrainShape::from_code(r.u8()?)
            .ok_or_else(|| Error::Corrupt("bad granularity code".into()))?;
        let coding_kind = r.u8()?;
        r.u8()?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let stored = r.u32()? as usize;
        let padding_grains = r.u32()? as usize;
        let name_len = r.u16()? as usize;
        let layer = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Corrupt("layer name is not utf-8".into()))?;
        let coding = match coding_kind {
            0 => {
                let scale = f32::from_le_bytes(r.array()?);
                ValueCoding::Linear(LinearQuantizer {
                    scale,
                    zero_point: r.u8()?,
                })
            }
            1 => {
                let n = r.u16()? as usize;
                let centers = (0..n)
                    .map(|_| r.array().map(f32::from_le_bytes))
                    .collect::<Result<Vec<_>>>()?;
                ValueCoding::Codebook(centers)
            }
            other => return Err(Error::Corrupt(format!("bad value coding {other}"))),
        };
        if dims.contains(&0) {
            return Err(Error::Corrupt("zero dimension".into()));
        }
        let [_, k, r_, s] = dims;
        let grain_size = match granularity {
            GrainShape::Fine => 1,
            GrainShape::Vector => s,
            GrainShape::Kernel => r_ * s,
            GrainShape::Filter => k * r_ * s,
        };
        let packed = r.take(stored.div_ceil(2))?;
        let indices: Vec<u8> = (0..stored)
            .map(|i| (packed[i / 2] >> (4 * (i % 2))) & 0x0f)
            .collect();
        let values = r.take(stored * grain_size)?.to_vec();
        if r.pos != bytes.len() {
            return Err(Error::Corrupt("trailing bytes".into()));
        }
        if padding_grains > stored {
            return Err(Error::Corrupt(
                "more padding grains than stored grains".into(),
            ));
        }
        let enc = SparseEncoding {
            layer,
            dims,
            granularity,
            grain_size,
            indices,
            values,
            padding_grains,
            coding,
        };
        enc.stored_positions()?;
        Ok(enc)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Grain index of every stored entry, padding included.
    pub fn stored_positions(&self) -> Result<Vec<usize>> {
        let g = self.grain_count();
        let mut next = 0usize;
        let mut out = Vec::with_capacity(self.indices.len());
        for &gap in &self.indices {
            let pos = next + gap as usize;
            if pos >= g {
                return Err(Error::Corrupt(format!(
                    "grain position {pos} beyond grain count {g}"
                )));
            }
            out.push(pos);
            next = pos + 1;
        }
        Ok(out)
    }

    /// Dense decoded values: stored grains get their decoded codes, all others 0.
    pub fn decode(&self) -> Result<Vec<f32>> {
        let mut dense = vec![0.0f32; self.param_count()];
        for (entry, pos) in self.stored_positions()?.into_iter().enumerate() {
            let codes = &self.values[entry * self.grain_size..(entry + 1) * self.grain_size];
            let dst = &mut dense[pos * self.grain_size..(pos + 1) * self.grain_size];
            for (d, &c) in dst.iter_mut().zip(codes) {
                *d = self.coding.value(c)?;
            }
        }
        Ok(dense)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}

fn encode_with(
    tensor: &WeightTensor,
    mask: &PruneMask,
    shape: GrainShape,
    coding: ValueCoding,
    code_of: impl Fn(f32) -> u8,
    zero_code: u8,
) -> Result<SparseEncoding> {
    let partition = GrainPartition::new(tensor.spec(), shape)?;
    if mask.layer() != tensor.name() {
        return Err(Error::LayerMismatch {
            expected: tensor.name().to_string(),
            actual: mask.layer().to_string(),
        });
    }
    let grain_keep = mask.grain_keep(&partition)?;
    let gs = partition.grain_size();
    let values_in = tensor.values();

    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut padding_grains = 0;
    // next grain position an index of 0 would point at
    let mut next = 0usize;
    for (g, _) in grain_keep.iter().enumerate().filter(|(_, &k)| k) {
        let mut skip = g - next;
        while skip > MAX_GAP as usize {
            indices.push(MAX_GAP);
            values.extend(std::iter::repeat_n(zero_code, gs));
            padding_grains += 1;
            skip -= MAX_GAP as usize + 1;
        }
        indices.push(skip as u8);
        values.extend(values_in[partition.grain(g)].iter().map(|&v| code_of(v)));
        next = g + 1;
    }
    Ok(SparseEncoding {
        layer: tensor.name().to_string(),
        dims: tensor.spec().dims(),
        granularity: shape,
        grain_size: gs,
        indices,
        values,
        padding_grains,
        coding,
    })
}

/// Encode the kept grains of `tensor` with linear 8-bit codes.
pub fn encode(
    tensor: &WeightTensor,
    mask: &PruneMask,
    shape: GrainShape,
) -> Result<SparseEncoding> {
    let kept = tensor
        .values()
        .iter()
        .zip(mask.keep())
        .filter(|(_, &k)| k)
        .map(|(v, _)| v);
    let q = LinearQuantizer::fit(kept);
    encode_with(
        tensor,
        mask,
        shape,
        ValueCoding::Linear(q),
        |v| q.code(v),
        q.zero_point,
    )
}

/// Encode with codebook indices as value codes. Padding grains use the center nearest 0.
pub fn encode_with_codebook(
    tensor: &WeightTensor,
    mask: &PruneMask,
    shape: GrainShape,
    codebook: &Codebook,
) -> Result<SparseEncoding> {
    if codebook.centers.is_empty() || codebook.centers.len() > 256 {
        return Err(Error::InvalidArgument(format!(
            "codebook must have 1..=256 centers, has {}",
            codebook.centers.len()
        )));
    }
    encode_with(
        tensor,
        mask,
        shape,
        ValueCoding::Codebook(codebook.centers.clone()),
        |v| codebook.nearest(v),
        codebook.nearest(0.0),
    )
}

/// Encode every layer, using fine grains for FC layers.
pub fn encode_model(
    model: &[WeightTensor],
    masks: &[PruneMask],
    shape: GrainShape,
) -> Result<Vec<SparseEncoding>> {
    if model.len() != masks.len() {
        return Err(Error::InvalidArgument(format!(
            "{} masks for {} layers",
            masks.len(),
            model.len()
        )));
    }
    model
        .iter()
        .zip(masks)
        .map(|(t, m)| encode(t, m, shape.effective_for(t.spec())))
        .collect()
}

/// Closed-form bit count for `stored` grains of `grain_size` weights.
pub fn bits_for(stored: usize, grain_size: usize) -> u64 {
    stored as u64 * (grain_size as u64 * 8 + 4)
}

pub(crate) fn spec_matches(enc: &SparseEncoding, spec: &LayerSpec) -> bool {
    enc.layer == spec.name && enc.dims == spec.dims()
}
