use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::metrics::bleu::ngrams;

pub const CIDER_MAX_N: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct CiderScore {
    /// Corpus mean, `10 ×` the mean cosine.
    pub score: f64,
    pub per_item: Vec<f64>,
    /// A single-item corpus gives every n-gram zero IDF.
    pub degenerate: bool,
}

type Vector<'a> = HashMap<&'a [String], f64>;

fn tfidf<'a>(tokens: &'a [String], n: usize, df: &HashMap<&[String], usize>, log_n: f64) -> Vector<'a> {
    ngrams(tokens, n)
        .into_iter()
        .map(|(g, tf)| {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            (g, tf as f64 * (log_n - d.ln()))
        })
        .collect()
}

fn cosine(a: &Vector, b: &Vector) -> f64 {
    let dot: f64 = a.iter().map(|(g, x)| x * b.get(g).copied().unwrap_or(0.0)).sum();
    let na: f64 = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// TF-IDF n-gram cosine between each candidate and its references, IDF taken
/// over the items' reference sets, averaged over orders 1–4 and scaled by 10.
pub fn cider(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<CiderScore> {
    if candidates.len() != references.len() {
        return Err(Error::shape("cider", &[candidates.len()], &[references.len()]));
    }
    let n_items = references.len();
    if n_items == 0 {
        return Ok(CiderScore {
            score: 0.0,
            per_item: Vec::new(),
            degenerate: true,
        });
    }
    let log_n = (n_items as f64).ln();
    let mut per_item = vec![0.0; n_items];
    for n in 1..=CIDER_MAX_N {
        let mut df: HashMap<&[String], usize> = HashMap::new();
        for refs in references {
            let seen: HashSet<&[String]> = refs.iter().flat_map(|r| ngrams(r, n).into_keys()).collect();
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        for (i, (cand, refs)) in candidates.iter().zip(references).enumerate() {
            if refs.is_empty() {
                return Err(Error::Invalid("every candidate needs a reference".into()));
            }
            let vc = tfidf(cand, n, &df, log_n);
            let s: f64 = refs.iter().map(|r| cosine(&vc, &tfidf(r, n, &df, log_n))).sum();
            per_item[i] += s / refs.len() as f64;
        }
    }
    for v in &mut per_item {
        *v *= 10.0 / CIDER_MAX_N as f64;
    }
    Ok(CiderScore {
        score: per_item.iter().sum::<f64>() / n_items as f64,
        per_item,
        degenerate: n_items < 2,
    })
}
