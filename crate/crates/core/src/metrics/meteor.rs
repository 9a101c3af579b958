use std::collections::{HashMap, VecDeque};

use rust_stemmers::{Algorithm, Stemmer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeteorParams {
    /// Recall weight in `F = PR / (alpha P + (1-alpha) R)`; 0.9 gives
    /// `10PR / (R + 9P)`.
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            gamma: 0.5,
            beta: 3.0,
        }
    }
}

/// Candidate-position → reference-position alignment. Exact matches first,
/// then Porter stems; within a stage each candidate token, left to right,
/// takes the leftmost free reference token.
fn align(cand: &[String], reference: &[String], stemmer: &Stemmer) -> Vec<Option<usize>> {
    let mut out = vec![None; cand.len()];
    let mut used = vec![false; reference.len()];
    let stems_c: Vec<String> = cand.iter().map(|w| stemmer.stem(w).into_owned()).collect();
    let stems_r: Vec<String> = reference.iter().map(|w| stemmer.stem(w).into_owned()).collect();
    for (keys_c, keys_r) in [(cand, reference), (&stems_c[..], &stems_r[..])] {
        let mut free: HashMap<&str, VecDeque<usize>> = HashMap::new();
        for (j, k) in keys_r.iter().enumerate() {
            if !used[j] {
                free.entry(k.as_str()).or_default().push_back(j);
            }
        }
        for (i, k) in keys_c.iter().enumerate() {
            if out[i].is_some() {
                continue;
            }
            if let Some(j) = free.get_mut(k.as_str()).and_then(VecDeque::pop_front) {
                out[i] = Some(j);
                used[j] = true;
            }
        }
    }
    out
}

fn score_one(cand: &[String], reference: &[String], p: &MeteorParams, stemmer: &Stemmer) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let a = align(cand, reference, stemmer);
    let m = a.iter().flatten().count();
    if m == 0 {
        return 0.0;
    }
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for j in &a {
        match (*j, prev) {
            (Some(j), Some(q)) if j == q + 1 => {}
            (Some(_), _) => chunks += 1,
            (None, _) => {}
        }
        prev = *j;
    }
    let prec = m as f64 / cand.len() as f64;
    let rec = m as f64 / reference.len() as f64;
    let f = prec * rec / (p.alpha * prec + (1.0 - p.alpha) * rec);
    let pen = p.gamma * (chunks as f64 / m as f64).powf(p.beta);
    f * (1.0 - pen)
}

/// METEOR without the synonym stage: exact plus stem alignment, harmonic
/// mean favouring recall, fragmentation penalty; best over references.
pub fn meteor_lite(candidate: &[String], references: &[Vec<String>], params: &MeteorParams) -> f64 {
    let stemmer = Stemmer::create(Algorithm::English);
    references
        .iter()
        .map(|r| score_one(candidate, r, params, &stemmer))
        .fold(0.0, f64::max)
}
