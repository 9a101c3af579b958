//! Video-to-text retrieval over precomputed caption embeddings.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::manifest::Corpus;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CaptionKey {
    pub video_id: String,
    pub caption_idx: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStore {
    width: usize,
    keys: Vec<CaptionKey>,
    captions: Vec<Vec<f32>>,
    tokens: Vec<Vec<String>>,
    videos: BTreeMap<String, Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub keys: Vec<CaptionKey>,
    /// Fewer than the requested number of candidates were available.
    pub shortfall: bool,
}

impl EmbeddingStore {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            keys: Vec::new(),
            captions: Vec::new(),
            tokens: Vec::new(),
            videos: BTreeMap::new(),
        }
    }

    /// Collects every caption that carries an embedding, plus pooled video
    /// embeddings.
    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        let width = corpus
            .items
            .iter()
            .find_map(|i| i.video_embedding.as_ref().map(Vec::len))
            .or_else(|| {
                corpus
                    .items
                    .iter()
                    .find_map(|i| i.caption_embeddings.as_ref().and_then(|e| e.first()).map(Vec::len))
            })
            .ok_or_else(|| Error::Invalid("corpus carries no retrieval embeddings".into()))?;
        let mut s = Self::new(width);
        for item in &corpus.items {
            if let Some(e) = &item.caption_embeddings {
                for (k, (emb, toks)) in e.iter().zip(&item.captions).enumerate() {
                    s.add_caption(
                        CaptionKey {
                            video_id: item.video_id.clone(),
                            caption_idx: k,
                        },
                        emb.clone(),
                        toks.clone(),
                    )?;
                }
            }
            if let Some(v) = &item.video_embedding {
                s.add_video(&item.video_id, v.clone())?;
            }
        }
        if s.is_empty() {
            return Err(Error::Invalid("retrieval store has no captions".into()));
        }
        Ok(s)
    }

    fn check(&self, v: &[f32]) -> Result<()> {
        if v.len() != self.width {
            return Err(Error::shape("embedding store", &[self.width], &[v.len()]));
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::Invalid("non-finite embedding".into()));
        }
        Ok(())
    }

    pub fn add_caption(&mut self, key: CaptionKey, emb: Vec<f32>, tokens: Vec<String>) -> Result<()> {
        self.check(&emb)?;
        self.keys.push(key);
        self.captions.push(emb);
        self.tokens.push(tokens);
        Ok(())
    }

    pub fn add_video(&mut self, video_id: &str, emb: Vec<f32>) -> Result<()> {
        self.check(&emb)?;
        self.videos.insert(video_id.to_string(), emb);
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[CaptionKey] {
        &self.keys
    }

    pub fn video_embedding(&self, video_id: &str) -> Option<&[f32]> {
        self.videos.get(video_id).map(Vec::as_slice)
    }

    pub fn caption_tokens(&self, key: &CaptionKey) -> Option<&[String]> {
        self.keys.iter().position(|k| k == key).map(|i| self.tokens[i].as_slice())
    }

    pub fn similarity_scores(&self, v: &[f32]) -> Result<Vec<f64>> {
        if v.len() != self.width {
            return Err(Error::shape("similarity", &[self.width], &[v.len()]));
        }
        Ok(self.captions.iter().map(|c| cosine(v, c)).collect())
    }

    /// Top `n_t` keys by descending score, ties by ascending key, skipping
    /// captions of `exclude`.
    pub fn rank_and_select(&self, scores: &[f64], n_t: usize, exclude: Option<&str>) -> Result<Selection> {
        rank_and_select(&self.keys, scores, n_t, exclude)
    }

    /// Retrieves `n_t` caption token lists for a query embedding.
    pub fn retrieve(&self, query: &[f32], n_t: usize, exclude: Option<&str>) -> Result<(Vec<Vec<String>>, Selection)> {
        let scores = self.similarity_scores(query)?;
        let sel = self.rank_and_select(&scores, n_t, exclude)?;
        let pos: HashMap<&CaptionKey, usize> = self.keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
        let toks = sel.keys.iter().map(|k| self.tokens[pos[k]].clone()).collect();
        Ok((toks, sel))
    }
}

/// Cosine similarity; a zero-norm side scores 0.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

pub fn rank_and_select(
    keys: &[CaptionKey],
    scores: &[f64],
    n_t: usize,
    exclude: Option<&str>,
) -> Result<Selection> {
    if n_t == 0 {
        return Err(Error::Invalid("n_t must be at least 1".into()));
    }
    if keys.len() != scores.len() {
        return Err(Error::shape("rank_and_select", &[keys.len()], &[scores.len()]));
    }
    if keys.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut idx: Vec<usize> = (0..keys.len())
        .filter(|&i| exclude.map_or(true, |ex| keys[i].video_id != ex))
        .collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| keys[a].cmp(&keys[b]))
    });
    let shortfall = idx.len() < n_t;
    idx.truncate(n_t);
    Ok(Selection {
        keys: idx.into_iter().map(|i| keys[i].clone()).collect(),
        shortfall,
    })
}

/// `X^(T)` for a corpus video: its pooled embedding queried against `store`,
/// excluding its own captions when `exclude_self` is set.
pub fn retrieve_text(
    video_id: &str,
    store: &EmbeddingStore,
    corpus: &Corpus,
    n_t: usize,
    exclude_self: bool,
) -> Result<(Vec<Vec<String>>, Selection)> {
    let item = corpus
        .find(video_id)
        .ok_or_else(|| Error::UnknownVideo(video_id.to_string()))?;
    let query = item
        .video_embedding
        .as_deref()
        .or_else(|| store.video_embedding(video_id))
        .ok_or_else(|| Error::Invalid(format!("video `{video_id}` has no pooled embedding")))?;
    store.retrieve(query, n_t, exclude_self.then_some(video_id))
}
