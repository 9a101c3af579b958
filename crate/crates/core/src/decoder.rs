//! Pre-LN transformer caption decoder and beam search.

use std::cmp::Ordering;

use rand_pcg::Pcg64;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::io::text::UNK;
use crate::params::{glorot_uniform, normal, ones, zeros, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct LnParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LnParams {
    fn register<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), ones(d)),
            bias: store.add(format!("{name}.bias"), zeros(d)),
        }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        g.layer_norm(x, self.gain.into(), self.bias.into(), LN_EPS)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttnParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

impl AttnParams {
    fn register<T: Scalar>(store: &mut ParamStore<T>, rng: &mut Pcg64, name: &str, d: usize) -> Self {
        let mut w = |s: &str| store.add(format!("{name}.w{s}"), glorot_uniform(rng, d, d));
        let (wq, wk, wv, wo) = (w("q"), w("k"), w("v"), w("o"));
        Self {
            wq,
            bq: store.add(format!("{name}.bq"), zeros(d)),
            wk,
            bk: store.add(format!("{name}.bk"), zeros(d)),
            wv,
            bv: store.add(format!("{name}.bv"), zeros(d)),
            wo,
            bo: store.add(format!("{name}.bo"), zeros(d)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BlockParams {
    pub ln1: LnParams,
    pub self_attn: AttnParams,
    pub ln2: LnParams,
    pub cross_attn: AttnParams,
    pub ln3: LnParams,
    pub ff1: ParamId,
    pub ff1_b: ParamId,
    pub ff2: ParamId,
    pub ff2_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct DecoderParams {
    /// `|V| × d_h`, shared with the output projection.
    pub word_emb: ParamId,
    pub pos_emb: ParamId,
    pub blocks: Vec<BlockParams>,
    pub final_ln: LnParams,
    pub heads: usize,
    pub l_max: usize,
}

impl DecoderParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Pcg64,
        vocab: usize,
        d_h: usize,
        n_layers: usize,
        heads: usize,
        l_max: usize,
    ) -> Result<Self> {
        if heads == 0 || d_h % heads != 0 {
            return Err(Error::Config(format!("{heads} heads do not divide d_h={d_h}")));
        }
        if l_max < 2 {
            return Err(Error::Config("l_max must leave room for bos and eos".into()));
        }
        let word_emb = store.add("dec.word_emb", normal(rng, vocab, d_h, 0.02));
        let pos_emb = store.add("dec.pos_emb", normal(rng, l_max, d_h, 0.02));
        let mut blocks = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let n = format!("dec.block{l}");
            blocks.push(BlockParams {
                ln1: LnParams::register(store, &format!("{n}.ln1"), d_h),
                self_attn: AttnParams::register(store, rng, &format!("{n}.self"), d_h),
                ln2: LnParams::register(store, &format!("{n}.ln2"), d_h),
                cross_attn: AttnParams::register(store, rng, &format!("{n}.cross"), d_h),
                ln3: LnParams::register(store, &format!("{n}.ln3"), d_h),
                ff1: store.add(format!("{n}.ff1"), glorot_uniform(rng, d_h, 4 * d_h)),
                ff1_b: store.add(format!("{n}.ff1_b"), zeros(4 * d_h)),
                ff2: store.add(format!("{n}.ff2"), glorot_uniform(rng, 4 * d_h, d_h)),
                ff2_b: store.add(format!("{n}.ff2_b"), zeros(d_h)),
            });
        }
        Ok(Self {
            word_emb,
            pos_emb,
            blocks,
            final_ln: LnParams::register(store, "dec.final_ln", d_h),
            heads,
            l_max,
        })
    }
}

/// `word_emb[c_i] + pos_emb[i] + l_fct + l_em` for every prefix position.
pub fn input_embed<T: Scalar>(
    g: &mut Graph<T>,
    prefix: &[usize],
    l_fct: Option<Var>,
    l_em: Option<Var>,
    p: &DecoderParams,
) -> Result<Var> {
    if prefix.len() > p.l_max {
        return Err(Error::Invalid(format!(
            "prefix of {} tokens exceeds l_max {}",
            prefix.len(),
            p.l_max
        )));
    }
    let vocab = g.rows(p.word_emb.into());
    let ids: Vec<usize> = prefix.iter().map(|&t| if t < vocab { t } else { UNK }).collect();
    let w = g.gather_rows(p.word_emb.into(), &ids)?;
    let positions: Vec<usize> = (0..prefix.len()).collect();
    let pos = g.gather_rows(p.pos_emb.into(), &positions)?;
    let mut x = g.add(w, pos)?;
    for l in [l_fct, l_em].into_iter().flatten() {
        x = g.add_row(x, l)?;
    }
    Ok(x)
}

/// `softmax(q kᵀ / √d_k) v`, returning the output and the probabilities.
pub fn scaled_dot_attention<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var, causal: bool) -> Result<(Var, Var)> {
    let d_k = g.cols(q);
    let kt = g.transpose(k);
    let s = g.matmul(q, kt)?;
    let s = g.scale(s, 1.0 / (d_k as f64).sqrt());
    let a = g.softmax_rows(s, causal)?;
    Ok((g.matmul(a, v)?, a))
}

/// Multi-head attention of `x` over `kv`; returns the projected output and
/// per-head probabilities.
pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    kv: Var,
    p: &AttnParams,
    heads: usize,
    causal: bool,
) -> Result<(Var, Vec<Var>)> {
    let d = g.cols(x);
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("{heads} heads do not divide width {d}")));
    }
    let proj = |g: &mut Graph<T>, src: Var, w: ParamId, b: ParamId| -> Result<Var> {
        let y = g.matmul(src, w.into())?;
        g.add_row(y, b.into())
    };
    let q = proj(g, x, p.wq, p.bq)?;
    let k = proj(g, kv, p.wk, p.bk)?;
    let v = proj(g, kv, p.wv, p.bv)?;
    let d_k = d / heads;
    let mut outs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * d_k, d_k)?;
        let kh = g.slice_cols(k, h * d_k, d_k)?;
        let vh = g.slice_cols(v, h * d_k, d_k)?;
        let (o, a) = scaled_dot_attention(g, qh, kh, vh, causal)?;
        outs.push(o);
        probs.push(a);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    Ok((proj(g, cat, p.wo, p.bo)?, probs))
}

pub struct DecoderOutput {
    /// `t × |V|` next-token logits.
    pub logits: Var,
    /// Cross-attention probabilities, `[layer][head]`, each `t × kv_rows`.
    pub cross_attention: Vec<Vec<Var>>,
}

/// Runs every block over the embedded prefix with `kv` (memory rows followed
/// by attribute rows) as cross-attention keys and values.
pub fn decoder_forward<T: Scalar>(
    g: &mut Graph<T>,
    prefix: &[usize],
    kv: Var,
    l_fct: Option<Var>,
    l_em: Option<Var>,
    p: &DecoderParams,
) -> Result<DecoderOutput> {
    if prefix.is_empty() {
        return Err(Error::Invalid("decoder needs a non-empty prefix".into()));
    }
    let mut x = input_embed(g, prefix, l_fct, l_em, p)?;
    let mut cross = Vec::with_capacity(p.blocks.len());
    for b in &p.blocks {
        let h = b.ln1.apply(g, x)?;
        let (sa, _) = multi_head_attention(g, h, h, &b.self_attn, p.heads, true)?;
        x = g.add(x, sa)?;
        let h = b.ln2.apply(g, x)?;
        let (ca, probs) = multi_head_attention(g, h, kv, &b.cross_attn, p.heads, false)?;
        cross.push(probs);
        x = g.add(x, ca)?;
        let h = b.ln3.apply(g, x)?;
        let f = g.matmul(h, b.ff1.into())?;
        let f = g.add_row(f, b.ff1_b.into())?;
        let f = g.gelu(f);
        let f = g.matmul(f, b.ff2.into())?;
        let f = g.add_row(f, b.ff2_b.into())?;
        x = g.add(x, f)?;
    }
    let h = p.final_ln.apply(g, x)?;
    let wt = g.transpose(p.word_emb.into());
    let logits = g.matmul(h, wt)?;
    Ok(DecoderOutput {
        logits,
        cross_attention: cross,
    })
}

/// Teacher-forced summed next-token cross-entropy of a framed caption
/// (`bos … eos`).
pub fn caption_loss<T: Scalar>(
    g: &mut Graph<T>,
    framed: &[usize],
    kv: Var,
    l_fct: Option<Var>,
    l_em: Option<Var>,
    p: &DecoderParams,
) -> Result<Var> {
    if framed.len() < 2 {
        return Err(Error::Invalid("caption loss needs at least one target token".into()));
    }
    let n = framed.len() - 1;
    let out = decoder_forward(g, &framed[..n], kv, l_fct, l_em, p)?;
    g.cross_entropy(out.logits, &framed[1..])
}

/// Last-position logits for a prefix.
pub fn decode_step<T: Scalar>(
    g: &mut Graph<T>,
    prefix: &[usize],
    kv: Var,
    l_fct: Option<Var>,
    l_em: Option<Var>,
    p: &DecoderParams,
) -> Result<Vec<T>> {
    let out = decoder_forward(g, prefix, kv, l_fct, l_em, p)?;
    let v = g.value(out.logits);
    Ok(v.row_slice(v.rows() - 1).to_vec())
}

/// Anything that can score the next token of a prefix.
pub trait StepScorer {
    /// Log-probabilities over the vocabulary for the token after `prefix`.
    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam: usize,
    /// Maximum length counting both `bos` and `eos`.
    pub l_max: usize,
    pub bos: usize,
    pub eos: usize,
    /// Rank finished hypotheses by mean instead of summed log-probability.
    pub length_normalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn rank_score(&self, normalize: bool) -> f64 {
        if normalize {
            self.log_prob / (self.tokens.len().saturating_sub(1).max(1)) as f64
        } else {
            self.log_prob
        }
    }
}

/// Higher score first, then the lexicographically smaller sequence.
fn better(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1))
}

/// Sorted token indices by descending log-prob, ties to the smaller id.
fn ranked_tokens(lp: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..lp.len()).collect();
    idx.sort_by(|&a, &b| lp[b].partial_cmp(&lp[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Beam search over summed log-probabilities. Each live hypothesis proposes
/// its `beam` best tokens, the global best `beam` candidates survive, and
/// candidates ending in `eos` or reaching `l_max` retire. Returns the best
/// retired hypothesis.
pub fn beam_search(scorer: &dyn StepScorer, cfg: &BeamConfig) -> Result<Hypothesis> {
    if cfg.beam == 0 {
        return Err(Error::Config("beam size must be at least 1".into()));
    }
    if cfg.l_max < 2 {
        return Err(Error::Config("l_max must be at least 2".into()));
    }
    let mut live = vec![Hypothesis {
        tokens: vec![cfg.bos],
        log_prob: 0.0,
        finished: false,
    }];
    let mut pool: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() {
        let mut cands: Vec<Hypothesis> = Vec::new();
        for h in &live {
            let lp = scorer.log_probs(&h.tokens)?;
            for t in ranked_tokens(&lp, cfg.beam) {
                let mut tokens = h.tokens.clone();
                tokens.push(t);
                let finished = t == cfg.eos || tokens.len() >= cfg.l_max;
                cands.push(Hypothesis {
                    tokens,
                    log_prob: h.log_prob + lp[t],
                    finished,
                });
            }
        }
        cands.sort_by(|a, b| better((a.log_prob, &a.tokens), (b.log_prob, &b.tokens)));
        cands.truncate(cfg.beam);
        live.clear();
        for c in cands {
            if c.finished {
                pool.push(c);
            } else {
                live.push(c);
            }
        }
        if !cfg.length_normalize {
            // log-probabilities only fall, so nothing live can overtake the
            // best retired hypothesis
            if let Some(best) = pool.iter().map(|h| h.log_prob).reduce(f64::max) {
                live.retain(|h| h.log_prob >= best);
            }
        }
    }
    let n = cfg.length_normalize;
    pool.sort_by(|a, b| better((a.rank_score(n), &a.tokens), (b.rank_score(n), &b.tokens)));
    pool.into_iter()
        .next()
        .ok_or_else(|| Error::Invalid("beam search produced no hypothesis".into()))
}

/// Argmax decoding, ties to the smaller token id.
pub fn greedy(scorer: &dyn StepScorer, cfg: &BeamConfig) -> Result<Hypothesis> {
    let mut h = Hypothesis {
        tokens: vec![cfg.bos],
        log_prob: 0.0,
        finished: false,
    };
    while !h.finished {
        let lp = scorer.log_probs(&h.tokens)?;
        let t = ranked_tokens(&lp, 1)[0];
        h.tokens.push(t);
        h.log_prob += lp[t];
        h.finished = t == cfg.eos || h.tokens.len() >= cfg.l_max;
    }
    Ok(h)
}

/// Scorer backed by a fixed table: the next-token distribution depends only
/// on the prefix via a user closure. Used for hand-built decoding problems.
pub struct FnScorer<F>(pub F);

impl<F: Fn(&[usize]) -> Vec<f64>> StepScorer for FnScorer<F> {
    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        Ok((self.0)(prefix))
    }
}

/// Converts raw logits to log-probabilities in f64.
pub fn log_probs_of<T: Scalar>(logits: &[T]) -> Vec<f64> {
    crate::tensor::log_softmax_f64(logits)
}

/// Summed log-probability of `tokens` after its leading `bos`, computed
/// outside the graph.
pub fn sequence_log_prob(scorer: &dyn StepScorer, tokens: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for t in 1..tokens.len() {
        total += scorer.log_probs(&tokens[..t])?[tokens[t]];
    }
    Ok(total)
}

pub fn empty_kv<T: Scalar>(g: &mut Graph<T>, d_h: usize) -> Var {
    g.constant(Tensor::zeros(&[0, d_h]))
}
