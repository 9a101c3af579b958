use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::io::lexicon::EmotionLexicon;
use crate::metrics::{acc_c, acc_sw, bleu, cider, holistic, meteor_lite, rouge_l_corpus, sum_score, EmotionTruth, MeteorParams};

/// Fractions in `[0, 1]` except `cider` (conventional ×100 scale) and `sum`
/// (0–100 scale, BLEU-4 + METEOR + ROUGE-L + CIDEr).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub sum: f64,
    pub acc_sw: f64,
    pub acc_c: f64,
    pub bfs: f64,
    pub cfs: f64,
    pub items: usize,
}

const KEYS: [&str; 13] = [
    "bleu1", "bleu2", "bleu3", "bleu4", "meteor", "rouge_l", "cider", "sum", "acc_sw", "acc_c", "bfs", "cfs", "items",
];

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

impl MetricReport {
    fn values(&self) -> [f64; 12] {
        [
            self.bleu1,
            self.bleu2,
            self.bleu3,
            self.bleu4,
            self.meteor,
            self.rouge_l,
            self.cider,
            self.sum,
            self.acc_sw,
            self.acc_c,
            self.bfs,
            self.cfs,
        ]
    }

    /// Fixed key order, values rounded to four decimals.
    pub fn to_json_value(&self) -> Value {
        let mut m = Map::new();
        for (k, v) in KEYS.iter().zip(self.values()) {
            m.insert(k.to_string(), Value::from(round4(v)));
        }
        m.insert("items".into(), Value::from(self.items));
        Value::Object(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("report serializes")
    }

    pub fn csv_header() -> String {
        KEYS.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cells: Vec<String> = self.values().iter().map(|v| format!("{:.4}", v)).collect();
        cells.push(self.items.to_string());
        cells.join(",")
    }
}

/// Scores `candidates` against per-item references.
pub fn evaluate(
    candidates: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    lexicon: &EmotionLexicon,
    gamma: f64,
) -> Result<MetricReport> {
    if candidates.len() != references.len() {
        return Err(Error::shape("evaluate", &[candidates.len()], &[references.len()]));
    }
    let b: Vec<f64> = (1..=4).map(|n| bleu(candidates, references, n)).collect::<Result<_>>()?;
    let n = candidates.len().max(1) as f64;
    let mp = MeteorParams::default();
    let meteor = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| meteor_lite(c, r, &mp))
        .sum::<f64>()
        / n;
    let rouge = rouge_l_corpus(candidates, references);
    let c = cider(candidates, references)?.score;
    let truths: Vec<EmotionTruth> = references
        .iter()
        .map(|r| EmotionTruth::from_references(r, lexicon))
        .collect();
    let sw = acc_sw(candidates, &truths, lexicon);
    let ac = acc_c(candidates, &truths, lexicon);
    let (bfs, cfs) = holistic(b[3], c, ac, gamma)?;
    Ok(MetricReport {
        bleu1: b[0],
        bleu2: b[1],
        bleu3: b[2],
        bleu4: b[3],
        meteor,
        rouge_l: rouge,
        cider: 100.0 * c,
        sum: sum_score(100.0 * b[3], 100.0 * meteor, 100.0 * rouge, 100.0 * c),
        acc_sw: sw,
        acc_c: ac,
        bfs,
        cfs,
        items: candidates.len(),
    })
}
