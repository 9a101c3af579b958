//! SPFT tensor files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SPFT"  u32 version=1  u8 modality  u32 rank  u32 dims[rank]  f32 payload[prod(dims)]
//! ```
//!
//! Several records may be concatenated into one bundle file.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SPFT";
pub const VERSION: u32 = 1;

/// Refuse payloads above 2^31 floats; no desk-scale tensor comes close.
const MAX_ELEMENTS: u64 = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Appearance,
    Motion,
    Audio,
    Text,
    Embedding,
    Untyped,
}

impl Modality {
    pub fn code(self) -> u8 {
        match self {
            Modality::Appearance => 0,
            Modality::Motion => 1,
            Modality::Audio => 2,
            Modality::Text => 3,
            Modality::Embedding => 4,
            Modality::Untyped => 255,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => Modality::Appearance,
            1 => Modality::Motion,
            2 => Modality::Audio,
            3 => Modality::Text,
            4 => Modality::Embedding,
            255 => Modality::Untyped,
            other => return Err(Error::Invalid(format!("unknown modality code {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Appearance => "appearance",
            Modality::Motion => "motion",
            Modality::Audio => "audio",
            Modality::Text => "text",
            Modality::Embedding => "embedding",
            Modality::Untyped => "untyped",
        }
    }
}

/// One pre-extracted feature matrix: `tokens × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub modality: Modality,
    pub matrix: Tensor<f32>,
}

impl FeatureSequence {
    pub fn new(modality: Modality, matrix: Tensor<f32>) -> Result<Self> {
        let (t, w) = matrix.dims2();
        if matrix.shape().len() != 2 || t == 0 || w == 0 {
            return Err(Error::Invalid(format!(
                "feature sequence needs a non-empty tokens×width matrix, got {:?}",
                matrix.shape()
            )));
        }
        if !matrix.all_finite() {
            return Err(Error::Invalid("feature sequence contains non-finite values".into()));
        }
        Ok(Self { modality, matrix })
    }

    pub fn tokens(&self) -> usize {
        self.matrix.rows()
    }

    pub fn width(&self) -> usize {
        self.matrix.cols()
    }
}

pub fn encode(modality: Modality, t: &Tensor<f32>, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(modality.code());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: n,
                found: self.buf.len() - self.pos,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes one record starting at `*pos`, advancing it.
pub fn decode_at(buf: &[u8], pos: &mut usize, path: &Path) -> Result<(Modality, Tensor<f32>)> {
    let mut c = Cursor { buf, pos: *pos, path };
    if c.buf.len() < c.pos + 4 || c.take(4)? != MAGIC {
        return Err(Error::Magic {
            path: path.to_path_buf(),
        });
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let modality = Modality::from_code(c.take(1)?[0])?;
    let rank = c.u32()?;
    if rank > 8 {
        return Err(Error::DimensionOverflow {
            path: path.to_path_buf(),
            dims: vec![rank],
        });
    }
    let dims: Vec<u32> = (0..rank).map(|_| c.u32()).collect::<Result<_>>()?;
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .filter(|&n| n <= MAX_ELEMENTS)
        .ok_or_else(|| Error::DimensionOverflow {
            path: path.to_path_buf(),
            dims: dims.clone(),
        })? as usize;
    let remaining = buf.len() - c.pos;
    if remaining < count * 4 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: count * 4,
            found: remaining,
        });
    }
    let payload = c.take(count * 4)?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    *pos = c.pos;
    let shape = dims.iter().map(|&d| d as usize).collect();
    Ok((modality, Tensor::new(shape, data)?))
}

pub fn write_tensor(path: &Path, modality: Modality, t: &Tensor<f32>) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + t.len() * 4);
    encode(modality, t, &mut buf);
    write_bytes(path, &buf)
}

pub fn read_tensor(path: &Path) -> Result<(Modality, Tensor<f32>)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    decode_at(&buf, &mut pos, path)
}

pub fn save_feature(path: &Path, f: &FeatureSequence) -> Result<()> {
    write_tensor(path, f.modality, &f.matrix)
}

pub fn load_feature_tensor(path: &Path) -> Result<FeatureSequence> {
    let (m, t) = read_tensor(path)?;
    FeatureSequence::new(m, t)
}

pub fn write_bundle(path: &Path, tensors: &[(Modality, &Tensor<f32>)]) -> Result<()> {
    let mut buf = Vec::new();
    for (m, t) in tensors {
        encode(*m, t, &mut buf);
    }
    write_bytes(path, &buf)
}

pub fn read_bundle(path: &Path) -> Result<Vec<(Modality, Tensor<f32>)>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut out = Vec::new();
    while pos < buf.len() {
        out.push(decode_at(&buf, &mut pos, path)?);
    }
    Ok(out)
}

fn write_bytes(path: &Path, buf: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(buf).map_err(|e| Error::io(path, e))
}
