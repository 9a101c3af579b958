//! Decoding a test set and scoring it.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::encoders::ModalityMask;
use crate::error::Result;
use crate::metrics::{evaluate, MetricReport};
use crate::model::{LossTerms, PreparedItem, SpectrumModel};
use crate::tensor::Scalar;

/// Beam-searched captions, decoded in parallel and returned in item order.
pub fn generate_captions<T: Scalar>(model: &SpectrumModel<T>, items: &[PreparedItem<T>]) -> Result<Vec<Vec<String>>> {
    items.par_iter().map(|it| model.caption(it)).collect()
}

pub fn score_captions<T: Scalar>(
    model: &SpectrumModel<T>,
    items: &[PreparedItem<T>],
    captions: &[Vec<String>],
) -> Result<MetricReport> {
    let refs: Vec<Vec<Vec<String>>> = items.iter().map(|i| i.references.clone()).collect();
    evaluate(captions, &refs, &model.lexicon, model.config.gamma)
}

pub fn run_eval<T: Scalar>(model: &SpectrumModel<T>, items: &[PreparedItem<T>]) -> Result<MetricReport> {
    let caps = generate_captions(model, items)?;
    score_captions(model, items, &caps)
}

/// One report per mask, each decoded with the mask swapped into the model.
pub fn mask_sweep<T: Scalar>(
    model: &SpectrumModel<T>,
    items: &[PreparedItem<T>],
    masks: &[ModalityMask],
) -> Result<Vec<(ModalityMask, MetricReport)>> {
    masks
        .iter()
        .map(|&m| {
            let mut mm = model.clone();
            mm.config.ablation.mask = m;
            Ok((m, run_eval(&mm, items)?))
        })
        .collect()
}

/// Mean teacher-forced losses over every reference caption.
pub fn mean_losses<T: Scalar>(model: &SpectrumModel<T>, items: &[PreparedItem<T>]) -> Result<LossTerms> {
    let per: Vec<LossTerms> = items
        .par_iter()
        .flat_map_iter(|it| (0..it.captions.len()).map(move |c| (it, c)))
        .map(|(it, c)| model.loss_terms(it, c))
        .collect::<Result<_>>()?;
    let n = per.len().max(1) as f64;
    let mut m = LossTerms::default();
    for t in &per {
        m.m2s += t.m2s / n;
        m.cap += t.cap / n;
        m.fld += t.fld / n;
        m.total += t.total / n;
        m.objective += t.objective / n;
    }
    Ok(m)
}

/// Area under the ROC curve by rank statistics, ties counted half. `None`
/// when only one class is present.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean per-attribute AUC of predicted probabilities over held-out items,
/// skipping attributes with a single class; `None` if none qualify.
pub fn mean_attribute_auc<T: Scalar>(model: &SpectrumModel<T>, items: &[PreparedItem<T>]) -> Result<Option<f64>> {
    let preds: Vec<Vec<f64>> = items
        .par_iter()
        .map(|it| model.predict_attributes(it))
        .collect::<Result<_>>()?;
    let n_att = model.attrs.len();
    let mut aucs = Vec::new();
    for a in 0..n_att {
        let s: Vec<f64> = preds.iter().map(|p| p[a]).collect();
        let l: Vec<bool> = items.iter().map(|it| it.labels[a] > 0.5).collect();
        if let Some(v) = auc(&s, &l) {
            aucs.push(v);
        }
    }
    Ok((!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64))
}
