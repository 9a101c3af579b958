//! Attribute concepts: emotional fine words plus frequency-selected factual words.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::lexicon::EmotionLexicon;
use crate::io::manifest::{Corpus, CorpusItem};
use crate::io::text::Stopwords;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttributeKind {
    Emotional { category: usize },
    Factual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub word: String,
    #[serde(flatten)]
    pub kind: AttributeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeVocabulary {
    attrs: Vec<Attribute>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl AttributeVocabulary {
    pub fn new(attrs: Vec<Attribute>) -> Self {
        let index = attrs
            .iter()
            .enumerate()
            .map(|(i, a)| (a.word.clone(), i))
            .collect();
        Self { attrs, index }
    }

    pub fn reindex(self) -> Self {
        Self::new(self.attrs)
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    pub fn attrs(&self) -> &[Attribute] {
        &self.attrs
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Attribute indices grouped by emotion category.
    pub fn category_groups(&self, n_categories: usize) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); n_categories];
        for (i, a) in self.attrs.iter().enumerate() {
            if let AttributeKind::Emotional { category } = a.kind {
                if category < n_categories {
                    g[category].push(i);
                }
            }
        }
        g
    }
}

/// Emotional attributes are the lexicon words present in the corpus, in
/// lexicon order; factual attributes are the `top_k_factual` most frequent
/// remaining non-stopwords, ties broken lexicographically.
pub fn build_attribute_vocab(
    corpus: &Corpus,
    lexicon: &EmotionLexicon,
    stopwords: &Stopwords,
    top_k_factual: usize,
) -> Result<AttributeVocabulary> {
    if corpus.is_empty() {
        return Err(Error::Invalid("cannot build attributes from an empty corpus".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for item in &corpus.items {
        for t in item.all_tokens() {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut attrs = Vec::new();
    for (ci, cat) in lexicon.categories().iter().enumerate() {
        for w in &cat.words {
            if counts.contains_key(w.as_str()) {
                attrs.push(Attribute {
                    word: w.clone(),
                    kind: AttributeKind::Emotional { category: ci },
                });
            }
        }
    }
    let mut factual: Vec<(&str, usize)> = counts
        .iter()
        .filter(|(w, _)| {
            !stopwords.contains(w) && !lexicon.is_emotion_word(w) && w.chars().any(char::is_alphabetic)
        })
        .map(|(w, c)| (*w, *c))
        .collect();
    factual.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    attrs.extend(factual.into_iter().take(top_k_factual).map(|(w, _)| Attribute {
        word: w.to_string(),
        kind: AttributeKind::Factual,
    }));
    if attrs.is_empty() {
        return Err(Error::EmptyAttributeSet);
    }
    Ok(AttributeVocabulary::new(attrs))
}

/// `v_i = 1` iff attribute `i` occurs in any caption of the item.
pub fn attribute_labels(item: &CorpusItem, attrs: &AttributeVocabulary) -> Vec<f64> {
    let mut v = vec![0.0; attrs.len()];
    for t in item.all_tokens() {
        if let Some(i) = attrs.index_of(t) {
            v[i] = 1.0;
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmotionDistribution {
    pub probs: Vec<f64>,
    /// No emotion word was found; `probs` is uniform.
    pub degenerate: bool,
}

impl EmotionDistribution {
    /// Categories holding the maximum mass; empty when degenerate.
    pub fn dominant(&self) -> Vec<usize> {
        if self.degenerate {
            return Vec::new();
        }
        let max = self.probs.iter().copied().fold(0.0, f64::max);
        (0..self.probs.len())
            .filter(|&i| self.probs[i] == max && max > 0.0)
            .collect()
    }
}

/// Per-category fine-word frequencies over all captions, normalized.
pub fn emotion_distribution(item: &CorpusItem, lexicon: &EmotionLexicon) -> EmotionDistribution {
    distribution_from_counts(&lexicon.counts(item.all_tokens()))
}

pub fn distribution_from_counts(counts: &[usize]) -> EmotionDistribution {
    let total: usize = counts.iter().sum();
    if total == 0 {
        let n = counts.len().max(1);
        return EmotionDistribution {
            probs: vec![1.0 / n as f64; counts.len()],
            degenerate: true,
        };
    }
    EmotionDistribution {
        probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        degenerate: false,
    }
}
