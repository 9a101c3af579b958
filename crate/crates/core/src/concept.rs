//! Concept investigation: attribute probabilities, coarse-to-fine holistic
//! vectors and the attribute embedding rows handed to the decoder.

use std::cmp::Ordering;

use rand_pcg::Pcg64;

use crate::autodiff::{Graph, Var};
use crate::encoders::{EncoderMemory, Segment};
use crate::error::{Error, Result};
use crate::params::{glorot_uniform, normal, zeros, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const BCE_EPS: f64 = 1e-7;

/// Score given to an emotion bag with no attribute in the vocabulary.
pub const ABSENT_CATEGORY: f64 = -1e4;

#[derive(Debug, Clone, Copy)]
pub struct VtaiParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl VtaiParams {
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, rng: &mut Pcg64, d_h: usize, n_att: usize) -> Self {
        Self {
            w: store.add("vtai.w", glorot_uniform(rng, 3 * d_h, n_att)),
            b: store.add("vtai.b", zeros(n_att)),
        }
    }
}

/// Linear field classifier over the pooled memory.
#[derive(Debug, Clone, Copy)]
pub struct FieldHead {
    pub w: ParamId,
    pub b: ParamId,
}

impl FieldHead {
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, rng: &mut Pcg64, d_h: usize, n_fld: usize) -> Self {
        Self {
            w: store.add("field_head.w", glorot_uniform(rng, 3 * d_h, n_fld)),
            b: store.add("field_head.b", zeros(n_fld)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CfbParams {
    pub fld: ParamId,
    pub ctg: ParamId,
    pub fct: ParamId,
    pub em: ParamId,
}

impl CfbParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Pcg64,
        n_fld: usize,
        n_ctg: usize,
        d_e: usize,
        d_h: usize,
    ) -> Self {
        Self {
            fld: store.add("cfb.fld", glorot_uniform(rng, n_fld, d_e)),
            ctg: store.add("cfb.ctg", glorot_uniform(rng, n_ctg, d_e)),
            fct: store.add("cfb.fct", glorot_uniform(rng, d_e, d_h)),
            em: store.add("cfb.em", glorot_uniform(rng, d_e, d_h)),
        }
    }
}

pub fn register_attribute_table<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut Pcg64,
    n_att: usize,
    d_h: usize,
) -> ParamId {
    store.add("aeb.table", normal(rng, n_att, d_h, 0.02))
}

/// Per-segment row means of the memory, concatenated V, A, T into `1×3d_h`.
/// Empty segments contribute zeros.
pub fn pool_memory<T: Scalar>(g: &mut Graph<T>, mem: &EncoderMemory) -> Result<Var> {
    let d_h = g.cols(mem.matrix);
    let mut parts = Vec::with_capacity(3);
    for s in [Segment::Visual, Segment::Audio, Segment::Text] {
        let (start, len) = mem.segment(s);
        let part = if len == 0 {
            g.constant(Tensor::zeros(&[1, d_h]))
        } else {
            let rows = g.slice_rows(mem.matrix, start, len)?;
            g.mean_rows(rows)
        };
        parts.push(part);
    }
    g.concat_cols(&parts)
}

/// Pre-sigmoid attribute scores `x·W + b`.
pub fn vtai_logits<T: Scalar>(g: &mut Graph<T>, x: Var, p: &VtaiParams) -> Result<Var> {
    if g.cols(x) != g.rows(p.w.into()) {
        return Err(Error::shape("vtai", g.shape(x), g.shape(p.w.into())));
    }
    let z = g.matmul(x, p.w.into())?;
    g.add_row(z, p.b.into())
}

pub fn vtai_forward<T: Scalar>(g: &mut Graph<T>, x: Var, p: &VtaiParams) -> Result<Var> {
    let z = vtai_logits(g, x, p)?;
    Ok(g.sigmoid(z))
}

pub fn m2s_loss<T: Scalar>(g: &mut Graph<T>, pr: Var, labels: &[f64]) -> Result<Var> {
    g.bce_mean(pr, labels, BCE_EPS)
}

pub fn field_logits<T: Scalar>(g: &mut Graph<T>, x: Var, p: &FieldHead) -> Result<Var> {
    if g.cols(x) != g.rows(p.w.into()) {
        return Err(Error::shape("field_head", g.shape(x), g.shape(p.w.into())));
    }
    let z = g.matmul(x, p.w.into())?;
    g.add_row(z, p.b.into())
}

/// Emotion distribution from attribute logits: each bag scores the largest
/// logit among its fine words, then a softmax over bags. Scoring in logit
/// space is the same ordering as the largest probability but keeps a
/// confident word from being flattened by the sigmoid.
pub fn predict_rho_em<T: Scalar>(g: &mut Graph<T>, logits: Var, groups: &[Vec<usize>]) -> Result<Var> {
    let scores = g.group_max(logits, groups, ABSENT_CATEGORY)?;
    g.softmax_rows(scores, false)
}

pub fn predict_rho_fct<T: Scalar>(g: &mut Graph<T>, x: Var, p: &FieldHead) -> Result<Var> {
    let z = field_logits(g, x, p)?;
    g.softmax_rows(z, false)
}

/// `(ρ_fct · W_fld · W_fct, ρ_em · W_ctg · W_em)`.
pub fn holistic_vectors<T: Scalar>(g: &mut Graph<T>, rho_fct: Var, rho_em: Var, p: &CfbParams) -> Result<(Var, Var)> {
    let f = g.matmul(rho_fct, p.fld.into())?;
    let l_fct = g.matmul(f, p.fct.into())?;
    let e = g.matmul(rho_em, p.ctg.into())?;
    let l_em = g.matmul(e, p.em.into())?;
    Ok((l_fct, l_em))
}

/// Indices of the `k` largest probabilities, ties to the lower index.
pub fn top_k_indices(pr: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pr.len()).collect();
    idx.sort_by(|&a, &b| pr[b].partial_cmp(&pr[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Top-`k_top` attribute rows of `table`, each scaled by its probability.
/// Returns the embedding and the chosen attribute indices in rank order.
pub fn attribute_embed<T: Scalar>(g: &mut Graph<T>, pr: Var, table: Var, k_top: usize) -> Result<(Var, Vec<usize>)> {
    let n_att = g.value(pr).len();
    if g.rows(table) != n_att {
        return Err(Error::shape("attribute_embed", g.shape(table), g.shape(pr)));
    }
    if k_top > n_att {
        return Err(Error::Config(format!("k_top {k_top} exceeds {n_att} attributes")));
    }
    if k_top == 0 {
        let d_h = g.cols(table);
        return Ok((g.constant(Tensor::zeros(&[0, d_h])), Vec::new()));
    }
    let probs: Vec<f64> = g.value(pr).data().iter().map(|v| v.f64()).collect();
    let idx = top_k_indices(&probs, k_top);
    let rows = g.gather_rows(table, &idx)?;
    let s = g.gather(pr, &idx)?;
    Ok((g.scale_rows(rows, s)?, idx))
}
