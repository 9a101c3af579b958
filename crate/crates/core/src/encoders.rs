//! Per-modality projection + normalization and assembly of the encoder memory.

use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::io::text::UNK;
use crate::params::{glorot_uniform, ones, zeros, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const LN_EPS: f64 = 1e-5;

/// `LN(x · W + b)` parameters for one modality.
#[derive(Debug, Clone, Copy)]
pub struct EncoderParams {
    pub proj: ParamId,
    pub bias: ParamId,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
}

impl EncoderParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Pcg64,
        name: &str,
        d_b: usize,
        d_h: usize,
    ) -> Self {
        Self {
            proj: store.add(format!("{name}.proj"), glorot_uniform(rng, d_b, d_h)),
            bias: store.add(format!("{name}.bias"), zeros(d_h)),
            ln_gain: store.add(format!("{name}.ln.gain"), ones(d_h)),
            ln_bias: store.add(format!("{name}.ln.bias"), zeros(d_h)),
        }
    }
}

/// Projects `tokens × d_b` features to `tokens × d_h` and layer-normalizes.
pub fn encode_modality<T: Scalar>(g: &mut Graph<T>, features: Var, p: &EncoderParams) -> Result<Var> {
    let d_b = g.rows(p.proj.into());
    if g.cols(features) != d_b {
        return Err(Error::shape("encode_modality", g.shape(features), g.shape(p.proj.into())));
    }
    let h = g.matmul(features, p.proj.into())?;
    let h = g.add_row(h, p.bias.into())?;
    g.layer_norm(h, p.ln_gain.into(), p.ln_bias.into(), LN_EPS)
}

/// Mean-pools each caption's token embeddings into one `d_b` row, then
/// projects like any other modality. Empty captions read as `<unk>`.
pub fn encode_text<T: Scalar>(
    g: &mut Graph<T>,
    captions: &[Vec<usize>],
    table: Var,
    p: &EncoderParams,
) -> Result<Var> {
    if captions.is_empty() {
        let d_h = g.cols(p.proj.into());
        return Ok(g.constant(Tensor::zeros(&[0, d_h])));
    }
    let width = g.cols(table);
    let mut rows = Vec::with_capacity(captions.len());
    for c in captions {
        let ids: &[usize] = if c.is_empty() { &[UNK] } else { c };
        let e = g.gather_rows(table, ids)?;
        rows.push(g.mean_rows(e));
    }
    let stacked = g.concat_rows(&rows, width)?;
    encode_modality(g, stacked, p)
}

/// Appearance rows followed by motion rows; absent parts contribute nothing.
pub fn fuse_video<T: Scalar>(g: &mut Graph<T>, app: Option<Var>, mot: Option<Var>) -> Result<Option<Var>> {
    let parts: Vec<Var> = [app, mot].into_iter().flatten().collect();
    match parts.as_slice() {
        [] => Ok(None),
        [one] => Ok(Some(*one)),
        _ => {
            let (a, m) = (g.cols(parts[0]), g.cols(parts[1]));
            if a != m {
                return Err(Error::shape("fuse_video", g.shape(parts[0]), g.shape(parts[1])));
            }
            Ok(Some(g.concat_rows(&parts, a)?))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityMask {
    pub appearance: bool,
    pub motion: bool,
    pub audio: bool,
    pub text: bool,
}

impl Default for ModalityMask {
    fn default() -> Self {
        Self::all()
    }
}

impl ModalityMask {
    pub fn all() -> Self {
        Self {
            appearance: true,
            motion: true,
            audio: true,
            text: true,
        }
    }

    pub fn visual_only() -> Self {
        Self {
            appearance: true,
            motion: true,
            audio: false,
            text: false,
        }
    }

    pub fn visual(&self) -> bool {
        self.appearance || self.motion
    }

    /// Parses strings like `V+A+T`, `V`, `a+m+T`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut m = Self {
            appearance: false,
            motion: false,
            audio: false,
            text: false,
        };
        for part in s.split('+').map(str::trim) {
            match part {
                "V" | "v" => {
                    m.appearance = true;
                    m.motion = true;
                }
                "a" | "app" | "appearance" => m.appearance = true,
                "m" | "mot" | "motion" => m.motion = true,
                "A" | "audio" => m.audio = true,
                "T" | "t" | "text" => m.text = true,
                other => return Err(Error::Config(format!("unknown modality `{other}` in mask `{s}`"))),
            }
        }
        Ok(m)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        match (self.appearance, self.motion) {
            (true, true) => parts.push("V"),
            (true, false) => parts.push("a"),
            (false, true) => parts.push("m"),
            _ => {}
        }
        if self.audio {
            parts.push("A");
        }
        if self.text {
            parts.push("T");
        }
        parts.join("+")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Visual,
    Audio,
    Text,
}

/// `[F_V; F_A; F_T]` with the row range each segment occupies.
#[derive(Debug, Clone, Copy)]
pub struct EncoderMemory {
    pub matrix: Var,
    /// `(start, len)` for visual, audio, text, in that order.
    pub offsets: [(usize, usize); 3],
}

impl EncoderMemory {
    pub fn rows(&self) -> usize {
        self.offsets.iter().map(|o| o.1).sum()
    }

    pub fn segment(&self, s: Segment) -> (usize, usize) {
        self.offsets[s as usize]
    }
}

pub fn assemble_memory<T: Scalar>(
    g: &mut Graph<T>,
    visual: Option<Var>,
    audio: Option<Var>,
    text: Option<Var>,
) -> Result<EncoderMemory> {
    let parts = [visual, audio, text];
    let present: Vec<Var> = parts.iter().flatten().copied().filter(|&v| g.rows(v) > 0).collect();
    if present.is_empty() {
        return Err(Error::EmptyMemory);
    }
    let width = g.cols(present[0]);
    let mut offsets = [(0, 0); 3];
    let mut start = 0;
    for (k, p) in parts.iter().enumerate() {
        let len = p.map_or(0, |v| g.rows(v));
        offsets[k] = (start, len);
        start += len;
    }
    let matrix = g.concat_rows(&present, width)?;
    Ok(EncoderMemory { matrix, offsets })
}
