//! Run configuration: model widths, training schedule, decoding and ablation
//! switches.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::ModalityMask;
use crate::error::{Error, Result};

pub const SEED_ENV: &str = "SPECTRUM_SEED";

/// Where the holistic distributions come from while training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    /// Ground-truth emotion distribution and one-hot field label.
    #[default]
    GroundTruth,
    /// Distributions predicted from the attribute head and field head.
    Predicted,
}

impl std::str::FromStr for RhoMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ground_truth" | "ground-truth" | "gt" => Ok(Self::GroundTruth),
            "predicted" | "pred" => Ok(Self::Predicted),
            _ => Err(Error::Config(format!("unknown rho mode `{s}`"))),
        }
    }
}

/// Architecture; anything here changes parameter shapes and therefore the
/// checkpoint hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_h: usize,
    pub d_b: usize,
    /// Width of the coarse concept space; `0` means `d_h / 2`.
    pub d_e: usize,
    pub n_layers: usize,
    pub heads: usize,
    pub l_max: usize,
    /// Number of factual attribute words tracked next to the emotional ones.
    pub top_k_factual: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_h: 64,
            d_b: 32,
            d_e: 0,
            n_layers: 2,
            heads: 4,
            l_max: 30,
            top_k_factual: 300,
        }
    }
}

impl ModelConfig {
    pub fn d_e(&self) -> usize {
        if self.d_e == 0 {
            (self.d_h / 2).max(1)
        } else {
            self.d_e
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub seed: u64,
    /// Weight of the auxiliary field-classification term.
    pub lambda_fld: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 16,
            epochs: 30,
            weight_decay: 0.001,
            lr_decay: 0.9,
            seed: 0,
            lambda_fld: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam: usize,
    pub length_normalize: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam: 5,
            length_normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub n_t: usize,
    /// Skip the query video's own captions.
    pub exclude_self: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            n_t: 3,
            exclude_self: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub mask: ModalityMask,
    pub cfb: bool,
    pub aeb: bool,
    pub field_emb: bool,
    pub emotion_emb: bool,
    pub rho_mode: RhoMode,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            mask: ModalityMask::all(),
            cfb: true,
            aeb: true,
            field_emb: true,
            emotion_emb: true,
            rho_mode: RhoMode::GroundTruth,
        }
    }
}

impl Ablation {
    /// Visual features only, no holistic vectors, no attribute rows.
    pub fn baseline() -> Self {
        Self {
            mask: ModalityMask::visual_only(),
            cfb: false,
            aeb: false,
            field_emb: false,
            emotion_emb: false,
            rho_mode: RhoMode::GroundTruth,
        }
    }

    pub fn use_field(&self) -> bool {
        self.cfb && self.field_emb
    }

    pub fn use_emotion(&self) -> bool {
        self.cfb && self.emotion_emb
    }

    pub fn label(&self) -> String {
        let mut s = self.mask.label();
        match (self.cfb, self.aeb) {
            (true, true) => s.push_str(" CFB+AEB"),
            (true, false) => s.push_str(" CFB"),
            (false, true) => s.push_str(" AEB"),
            (false, false) => {}
        }
        if self.cfb && !(self.field_emb && self.emotion_emb) {
            s.push_str(&format!(" fld={} emo={}", self.field_emb, self.emotion_emb));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub retrieval: RetrievalConfig,
    pub ablation: Ablation,
    /// Attribute rows passed to the decoder.
    pub k_top: usize,
    /// Emotion weight of the holistic scores.
    pub gamma: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            retrieval: RetrievalConfig::default(),
            ablation: Ablation::default(),
            k_top: 10,
            gamma: 1.5,
        }
    }
}

impl Config {
    /// Schedule for pretrained-scale features: lr 5e-7, batch 128, 50 epochs.
    pub fn pretrained_hparams() -> Self {
        let mut c = Self::default();
        c.train.lr = 5e-7;
        c.train.batch = 128;
        c.train.epochs = 50;
        c
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_str(&text)?;
        c.validate()?;
        Ok(c)
    }

    /// Applies `SPECTRUM_SEED` when set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(s) = std::env::var(SEED_ENV) {
            self.train.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer")))?;
        }
        Ok(self)
    }

    /// Attribute rows actually used; zero when the attribute block is off.
    pub fn effective_k_top(&self, n_att: usize) -> usize {
        if self.ablation.aeb {
            self.k_top.min(n_att)
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let positive = [
            ("d_h", m.d_h),
            ("d_b", m.d_b),
            ("n_layers", m.n_layers),
            ("heads", m.heads),
            ("batch", self.train.batch),
            ("beam", self.decode.beam),
            ("n_t", self.retrieval.n_t),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if m.d_h % m.heads != 0 {
            return Err(Error::Config(format!("{} heads do not divide d_h={}", m.heads, m.d_h)));
        }
        if m.l_max < 3 {
            return Err(Error::Config("l_max must be at least 3".into()));
        }
        if !(self.train.lr > 0.0) || !(self.train.lr_decay > 0.0) || self.train.weight_decay < 0.0 {
            return Err(Error::Config("lr and lr_decay must be positive, weight_decay non-negative".into()));
        }
        if self.gamma < 0.0 || self.train.lambda_fld < 0.0 {
            return Err(Error::Config("gamma and lambda_fld must be non-negative".into()));
        }
        if !self.ablation.mask.visual() && !self.ablation.mask.audio && !self.ablation.mask.text {
            return Err(Error::Config("modality mask selects nothing".into()));
        }
        Ok(())
    }

    /// Hash of the architecture section, stored in checkpoints.
    pub fn model_hash(&self) -> String {
        let canon = serde_json::to_vec(&self.model).expect("model config serializes");
        hex::encode(Sha256::digest(&canon))
    }
}
