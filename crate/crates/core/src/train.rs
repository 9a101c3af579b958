//! Deterministic training loop.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::io::attributes::build_attribute_vocab;
use crate::io::lexicon::{EmotionLexicon, FieldTaxonomy};
use crate::io::manifest::Corpus;
use crate::io::text::{Stopwords, Vocabulary};
use crate::metrics::MetricReport;
use crate::model::{retrieved_text, LossTerms, PreparedItem, SpectrumModel};
use crate::optim::{densify, AdamConfig, AdamState};
use crate::retrieval::EmbeddingStore;
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Per-example means.
    pub total: f64,
    pub cap: f64,
    pub m2s: f64,
    pub fld: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalLog {
    pub epoch: usize,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogLine {
    Epoch(EpochLog),
    Eval(EvalLog),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub evals: Vec<EvalLog>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.epochs {
            s.push_str(&serde_json::to_string(&LogLine::Epoch(e.clone())).unwrap());
            s.push('\n');
        }
        for e in &self.evals {
            s.push_str(&serde_json::to_string(&LogLine::Eval(e.clone())).unwrap());
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut log = Self::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                LogLine::Epoch(e) => log.epochs.push(e),
                LogLine::Eval(e) => log.evals.push(e),
            }
        }
        Ok(log)
    }
}

/// Vocabulary and attribute concepts drawn from the training corpus.
pub fn build_model(
    config: &Config,
    train: &Corpus,
    lexicon: &EmotionLexicon,
    taxonomy: &FieldTaxonomy,
    stopwords: &Stopwords,
) -> Result<SpectrumModel<f32>> {
    if train.is_empty() {
        return Err(Error::Invalid("training corpus is empty".into()));
    }
    let vocab = Vocabulary::build(train.items.iter().flat_map(|i| i.captions.iter().map(Vec::as_slice)));
    let attrs = build_attribute_vocab(train, lexicon, stopwords, config.model.top_k_factual)?;
    SpectrumModel::new(config.clone(), vocab, attrs, lexicon.clone(), taxonomy.clone())
}

/// Loads and encodes every item, retrieving text from `pool`.
pub fn prepare_corpus<T: Scalar>(
    model: &SpectrumModel<T>,
    corpus: &Corpus,
    pool: Option<&EmbeddingStore>,
) -> Result<Vec<PreparedItem<T>>> {
    let r = &model.config.retrieval;
    corpus
        .items
        .iter()
        .map(|item| {
            let text = retrieved_text(item, pool, r.n_t, r.exclude_self)?;
            model.prepare(item, &text)
        })
        .collect()
}

/// Caption-level examples `(item, caption)`.
pub fn examples<T>(data: &[PreparedItem<T>]) -> Vec<(usize, usize)> {
    data.iter()
        .enumerate()
        .flat_map(|(i, it)| (0..it.captions.len()).map(move |c| (i, c)))
        .collect()
}

pub fn adam_for<T: Scalar>(model: &SpectrumModel<T>) -> AdamState {
    let t = &model.config.train;
    AdamState::new(
        &model.store,
        AdamConfig {
            lr: t.lr,
            weight_decay: t.weight_decay,
            ..AdamConfig::default()
        },
    )
}

/// One optimizer step on the mean objective of `batch`; returns the mean
/// loss terms before the update.
pub fn train_step<T: Scalar>(
    model: &mut SpectrumModel<T>,
    adam: &mut AdamState,
    data: &[PreparedItem<T>],
    batch: &[(usize, usize)],
) -> Result<LossTerms> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let inv = 1.0 / batch.len() as f64;
    let (terms, grads) = {
        let mut g = Graph::with_params(&model.store, true);
        let mut objective = None;
        let mut sum = LossTerms::default();
        for &(i, c) in batch {
            let v = model.forward(&mut g, &data[i], c)?;
            let t = v.values(&g);
            sum.m2s += t.m2s * inv;
            sum.cap += t.cap * inv;
            sum.fld += t.fld * inv;
            sum.total += t.total * inv;
            sum.objective += t.objective * inv;
            objective = Some(match objective {
                None => v.objective,
                Some(o) => g.add(o, v.objective)?,
            });
        }
        let loss = g.scale(objective.unwrap(), inv);
        let grads = g.backward(loss)?;
        (sum, grads.param_grads())
    };
    let grads = densify(&model.store, grads);
    adam.step(&mut model.store, &grads)?;
    Ok(terms)
}

fn epoch_rng(seed: u64, epoch: usize) -> Pcg64 {
    Pcg64::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(epoch as u64 + 1))
}

/// Runs `config.train.epochs` epochs with per-epoch shuffling and learning
/// rate `lr · decay^e`. `on_epoch` sees each epoch's log as it completes.
pub fn train<T: Scalar>(
    model: &mut SpectrumModel<T>,
    data: &[PreparedItem<T>],
    mut on_epoch: impl FnMut(&SpectrumModel<T>, &EpochLog) -> Result<()>,
) -> Result<TrainLog> {
    let tc = model.config.train.clone();
    let mut adam = adam_for(model);
    let mut ex = examples(data);
    if ex.is_empty() {
        return Err(Error::Invalid("no training captions".into()));
    }
    let mut log = TrainLog::default();
    for epoch in 0..tc.epochs {
        let start = Instant::now();
        let lr = tc.lr_at(epoch);
        adam.set_lr(lr);
        ex.shuffle(&mut epoch_rng(tc.seed, epoch));
        let mut acc = LossTerms::default();
        for batch in ex.chunks(tc.batch) {
            let t = train_step(model, &mut adam, data, batch)?;
            let w = batch.len() as f64 / ex.len() as f64;
            acc.total += t.total * w;
            acc.cap += t.cap * w;
            acc.m2s += t.m2s * w;
            acc.fld += t.fld * w;
        }
        let e = EpochLog {
            epoch,
            lr,
            total: acc.total,
            cap: acc.cap,
            m2s: acc.m2s,
            fld: acc.fld,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        on_epoch(model, &e)?;
        log.epochs.push(e);
    }
    Ok(log)
}

pub struct TrainOutcome {
    pub model: SpectrumModel<f32>,
    pub pool: Option<EmbeddingStore>,
    pub log: TrainLog,
}

/// Builds, prepares and trains a model on `train`, streaming JSON log lines
/// to `sink`.
pub fn run_training(
    config: &Config,
    train_corpus: &Corpus,
    lexicon: &EmotionLexicon,
    taxonomy: &FieldTaxonomy,
    stopwords: &Stopwords,
    sink: &mut dyn Write,
) -> Result<TrainOutcome> {
    let model = build_model(config, train_corpus, lexicon, taxonomy, stopwords)?;
    fit(model, train_corpus, sink)
}

/// Trains an already built model on `train`, using its captions as the
/// retrieval pool when it carries embeddings.
pub fn fit(mut model: SpectrumModel<f32>, train_corpus: &Corpus, sink: &mut dyn Write) -> Result<TrainOutcome> {
    let pool = EmbeddingStore::from_corpus(train_corpus).ok();
    let data = prepare_corpus(&model, train_corpus, pool.as_ref())?;
    let log = train(&mut model, &data, |_, e| {
        let line = serde_json::to_string(&LogLine::Epoch(e.clone()))?;
        writeln!(sink, "{line}").map_err(|err| Error::io("<train log>", err))
    })?;
    Ok(TrainOutcome { model, pool, log })
}
