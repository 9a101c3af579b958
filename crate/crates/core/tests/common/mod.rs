//! Shared fixtures and independent reference implementations for the
//! integration tests. The oracles are deliberately naive: owned n-gram
//! lists, linear scans and exhaustive enumeration instead of hash maps and
//! dynamic programming.
#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use rust_stemmers::{Algorithm, Stemmer};

use spectrum::config::{Config, ModelConfig};
use spectrum::io::attributes::build_attribute_vocab;
use spectrum::io::lexicon::{EmotionLexicon, FieldTaxonomy};
use spectrum::io::manifest::{Corpus, CorpusItem};
use spectrum::io::spft::{write_tensor, Modality};
use spectrum::io::text::{Stopwords, Vocabulary};
use spectrum::model::{PreparedItem, SpectrumModel};
use spectrum::params::normal;

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

// ---------------------------------------------------------------- fixtures

/// Eight caption words plus four reserved ids: a 12-token vocabulary.
pub const TINY_CAPTIONS: [&str; 2] = ["a dog runs happily", "the dog sits in park"];

pub fn tiny_config() -> Config {
    let mut c = Config::default();
    c.model = ModelConfig {
        d_h: 8,
        d_b: 4,
        d_e: 4,
        n_layers: 1,
        heads: 1,
        l_max: 10,
        top_k_factual: 8,
    };
    c.k_top = 3;
    c
}

/// A one-video corpus with random features drawn from `seed`.
pub fn tiny_corpus(dir: &Path, seed: u64, d_b: usize) -> Corpus {
    let mut rng = Pcg64::seed_from_u64(seed);
    let mut paths = Vec::new();
    for (k, (m, n)) in [(Modality::Appearance, 3), (Modality::Motion, 2), (Modality::Audio, 2)]
        .into_iter()
        .enumerate()
    {
        let p = dir.join(format!("tiny{seed}.{k}.spft"));
        write_tensor(&p, m, &normal(&mut rng, n, d_b, 1.0)).unwrap();
        paths.push(p);
    }
    Corpus {
        items: vec![CorpusItem {
            video_id: format!("tiny{seed}"),
            appearance: paths[0].clone(),
            motion: paths[1].clone(),
            audio: paths[2].clone(),
            captions: TINY_CAPTIONS.iter().map(|c| toks(c)).collect(),
            field: 3,
            caption_embeddings: None,
            video_embedding: None,
        }],
    }
}

pub fn tiny_model(config: Config, corpus: &Corpus) -> SpectrumModel<f64> {
    let lex = EmotionLexicon::default();
    let vocab = Vocabulary::build(corpus.items.iter().flat_map(|i| i.captions.iter().map(Vec::as_slice)));
    let attrs = build_attribute_vocab(corpus, &lex, &Stopwords::default(), config.model.top_k_factual).unwrap();
    SpectrumModel::new(config, vocab, attrs, lex, FieldTaxonomy::default()).unwrap()
}

/// Tiny f64 model plus its single prepared item; `retrieved` stands in for
/// retrieval output.
pub fn tiny(dir: &Path, config: Config, seed: u64) -> (SpectrumModel<f64>, PreparedItem<f64>) {
    let corpus = tiny_corpus(dir, seed, config.model.d_b);
    let m = tiny_model(config, &corpus);
    let retrieved = vec![toks("the dog runs in park")];
    let p = m.prepare(&corpus.items[0], &retrieved).unwrap();
    (m, p)
}

// ---------------------------------------------------------- random text

const WORDS: &[&str] = &[
    "a", "the", "dog", "dogs", "run", "runs", "running", "happy", "happily", "sad", "cat", "cats", "play",
    "played", "playing", "park", "in", "on", "man", "woman",
];

pub fn random_sentence(rng: &mut Pcg64, max_len: usize) -> Vec<String> {
    let n = rng.gen_range(1..=max_len);
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string()).collect()
}

/// `(candidates, references)` with 2–6 items, 1–4 references each.
pub fn random_set(rng: &mut Pcg64) -> (Vec<Vec<String>>, Vec<Vec<Vec<String>>>) {
    let items = rng.gen_range(2..=6);
    let mut c = Vec::new();
    let mut r = Vec::new();
    for _ in 0..items {
        let refs: Vec<Vec<String>> = (0..rng.gen_range(1..=4)).map(|_| random_sentence(rng, 9)).collect();
        // sometimes copy a reference so high-order n-grams match
        let cand = if rng.gen_bool(0.3) {
            refs[0].clone()
        } else {
            random_sentence(rng, 9)
        };
        c.push(cand);
        r.push(refs);
    }
    (c, r)
}

// ----------------------------------------------------------------- oracles

fn gram_list(t: &[String], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + n <= t.len() {
        out.push(t[i..i + n].to_vec());
        i += 1;
    }
    out
}

fn occurrences(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct(list: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

pub fn bleu_oracle(c: &[Vec<String>], r: &[Vec<Vec<String>>], n: usize) -> f64 {
    let mut log_p = 0.0;
    for k in 1..=n {
        let mut num = 0usize;
        let mut den = 0usize;
        for (cand, refs) in c.iter().zip(r) {
            let cg = gram_list(cand, k);
            den += cg.len();
            for g in distinct(&cg) {
                let mut best = 0;
                for rf in refs {
                    best = best.max(occurrences(&gram_list(rf, k), &g));
                }
                num += occurrences(&cg, &g).min(best);
            }
        }
        if num == 0 {
            return 0.0;
        }
        log_p += (num as f64 / den as f64).ln();
    }
    let clen: usize = c.iter().map(Vec::len).sum();
    let mut rlen = 0usize;
    for (cand, refs) in c.iter().zip(r) {
        let mut best: Option<usize> = None;
        for rf in refs {
            let l = rf.len();
            best = Some(match best {
                None => l,
                Some(b) => {
                    let (db, dl) = (b.abs_diff(cand.len()), l.abs_diff(cand.len()));
                    if dl < db || (dl == db && l < b) {
                        l
                    } else {
                        b
                    }
                }
            });
        }
        rlen += best.unwrap();
    }
    let bp = if clen > rlen { 1.0 } else { (1.0 - rlen as f64 / clen as f64).exp() };
    bp * (log_p / n as f64).exp()
}

fn is_subsequence(sub: &[&String], of: &[String]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|s| it.any(|x| x == *s))
}

/// LCS by trying every subset of the candidate.
pub fn lcs_oracle(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_oracle(c: &[Vec<String>], r: &[Vec<Vec<String>>]) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    let mut total = 0.0;
    for (cand, refs) in c.iter().zip(r) {
        let mut best = 0.0f64;
        for rf in refs {
            let l = lcs_oracle(cand, rf) as f64;
            if l > 0.0 {
                let p = l / cand.len() as f64;
                let rc = l / rf.len() as f64;
                best = best.max((1.0 + beta2) * p * rc / (rc + beta2 * p));
            }
        }
        total += best;
    }
    total / c.len() as f64
}

fn tfidf_vec(t: &[String], n: usize, refs: &[Vec<Vec<String>>]) -> Vec<(Vec<String>, f64)> {
    let big_n = refs.len() as f64;
    let gl = gram_list(t, n);
    distinct(&gl)
        .into_iter()
        .map(|g| {
            let df = refs
                .iter()
                .filter(|item| item.iter().any(|rf| occurrences(&gram_list(rf, n), &g) > 0))
                .count();
            let w = occurrences(&gl, &g) as f64 * (big_n.ln() - (df.max(1) as f64).ln());
            (g, w)
        })
        .collect()
}

fn sparse_cos(a: &[(Vec<String>, f64)], b: &[(Vec<String>, f64)]) -> f64 {
    let mut dot = 0.0;
    for (g, x) in a {
        for (h, y) in b {
            if g == h {
                dot += x * y;
            }
        }
    }
    let na = a.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|(_, y)| y * y).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Corpus CIDEr on the internal (×10) scale.
pub fn cider_oracle(c: &[Vec<String>], r: &[Vec<Vec<String>>]) -> f64 {
    let mut corpus = 0.0;
    for (cand, refs) in c.iter().zip(r) {
        let mut item = 0.0;
        for n in 1..=4 {
            let vc = tfidf_vec(cand, n, r);
            let mut s = 0.0;
            for rf in refs {
                s += sparse_cos(&vc, &tfidf_vec(rf, n, r));
            }
            item += s / refs.len() as f64;
        }
        corpus += 10.0 * item / 4.0;
    }
    corpus / c.len() as f64
}

pub fn meteor_oracle(cand: &[String], refs: &[Vec<String>]) -> f64 {
    let stemmer = Stemmer::create(Algorithm::English);
    let stem = |w: &String| stemmer.stem(w).into_owned();
    let mut best = 0.0f64;
    for rf in refs {
        let mut used = vec![false; rf.len()];
        let mut a: Vec<Option<usize>> = vec![None; cand.len()];
        for stage in 0..2 {
            for i in 0..cand.len() {
                if a[i].is_some() {
                    continue;
                }
                for j in 0..rf.len() {
                    let eq = if stage == 0 { cand[i] == rf[j] } else { stem(&cand[i]) == stem(&rf[j]) };
                    if !used[j] && eq {
                        a[i] = Some(j);
                        used[j] = true;
                        break;
                    }
                }
            }
        }
        let m = a.iter().filter(|x| x.is_some()).count();
        if m == 0 {
            continue;
        }
        let mut chunks = 0;
        for i in 0..cand.len() {
            if let Some(j) = a[i] {
                let continues = i > 0 && j > 0 && a[i - 1] == Some(j - 1);
                if !continues {
                    chunks += 1;
                }
            }
        }
        let p = m as f64 / cand.len() as f64;
        let rc = m as f64 / rf.len() as f64;
        let f = 10.0 * p * rc / (rc + 9.0 * p);
        let pen = 0.5 * (chunks as f64 / m as f64).powi(3);
        best = best.max(f * (1.0 - pen));
    }
    best
}

/// Full sort of all candidates by (score desc, key asc), self excluded.
pub fn rank_oracle<K: Ord + Clone>(keys: &[K], scores: &[f64], n: usize, skip: impl Fn(&K) -> bool) -> Vec<K> {
    let mut all: Vec<(f64, K)> = keys
        .iter()
        .zip(scores)
        .filter(|(k, _)| !skip(k))
        .map(|(k, s)| (*s, k.clone()))
        .collect();
    // insertion sort, to stay independent of the library's sort_by
    for i in 1..all.len() {
        let mut j = i;
        while j > 0 && {
            let (a, b) = (&all[j - 1], &all[j]);
            b.0 > a.0 || (b.0 == a.0 && b.1 < a.1)
        } {
            all.swap(j - 1, j);
            j -= 1;
        }
    }
    all.into_iter().take(n).map(|(_, k)| k).collect()
}
