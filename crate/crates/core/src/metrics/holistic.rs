use crate::error::{Error, Result};

fn blend(x: f64, acc: f64, gamma: f64) -> f64 {
    let g2 = gamma * gamma;
    let den = g2 * acc + x;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + g2) * x * acc / den
    }
}

/// `(BFS, CFS)`: weighted harmonic blends of BLEU-4 and CIDEr with the
/// sentence-level emotion accuracy. All inputs share one scale.
pub fn holistic(bleu4: f64, cider: f64, acc_c: f64, gamma: f64) -> Result<(f64, f64)> {
    if [bleu4, cider, acc_c, gamma].iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::Invalid("holistic scores need finite non-negative inputs".into()));
    }
    Ok((blend(bleu4, acc_c, gamma), blend(cider, acc_c, gamma)))
}

/// BLEU-4 + METEOR + ROUGE-L + CIDEr on the 0–100 scale.
pub fn sum_score(bleu4: f64, meteor: f64, rouge_l: f64, cider: f64) -> f64 {
    bleu4 + meteor + rouge_l + cider
}
