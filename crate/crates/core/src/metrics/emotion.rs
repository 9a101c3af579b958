use std::collections::BTreeSet;

use crate::io::attributes::distribution_from_counts;
use crate::io::lexicon::EmotionLexicon;

/// Emotion annotation of one item, read off its reference captions.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionTruth {
    pub words: BTreeSet<String>,
    /// Bags with the highest fine-word count; empty when none occur.
    pub dominant: Vec<usize>,
}

impl EmotionTruth {
    pub fn from_references(references: &[Vec<String>], lexicon: &EmotionLexicon) -> Self {
        let tokens = references.iter().flatten();
        Self {
            words: tokens
                .clone()
                .filter(|t| lexicon.is_emotion_word(t))
                .cloned()
                .collect(),
            dominant: dominant(&lexicon.counts(tokens)),
        }
    }
}

fn dominant(counts: &[usize]) -> Vec<usize> {
    distribution_from_counts(counts).dominant()
}

/// Word-level accuracy over all candidates: a candidate is right when it
/// uses at least one emotion word and every emotion word it uses appears in
/// the item's references. An emotion-free candidate is right only for an
/// emotion-free item.
pub fn acc_sw(candidates: &[Vec<String>], truths: &[EmotionTruth], lexicon: &EmotionLexicon) -> f64 {
    if candidates.is_empty() {
        return 0.0;
    }
    let correct = candidates
        .iter()
        .zip(truths)
        .filter(|(c, t)| {
            let words: Vec<&String> = c.iter().filter(|w| lexicon.is_emotion_word(w)).collect();
            if words.is_empty() {
                t.words.is_empty()
            } else {
                words.iter().all(|w| t.words.contains(*w))
            }
        })
        .count();
    correct as f64 / candidates.len() as f64
}

/// Sentence-level accuracy: the candidate's set of dominant bags equals the
/// reference set (so ties only match identical ties).
pub fn acc_c(candidates: &[Vec<String>], truths: &[EmotionTruth], lexicon: &EmotionLexicon) -> f64 {
    if candidates.is_empty() {
        return 0.0;
    }
    let correct = candidates
        .iter()
        .zip(truths)
        .filter(|(c, t)| dominant(&lexicon.counts(c.iter())) == t.dominant)
        .count();
    correct as f64 / candidates.len() as f64
}
