//! JSON Lines corpus manifests.
//!
//! One object per line with keys `video_id`, `appearance`, `motion`, `audio`
//! (SPFT paths, relative to the manifest), `captions` (strings), `field`
//! (taxonomy index or name), and optionally `caption_embeddings` /
//! `video_embedding`, each either inline numbers or an SPFT sidecar path.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::io::lexicon::FieldTaxonomy;
use crate::io::spft::{self, FeatureSequence, Modality};
use crate::io::text::tokenize;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub video_id: String,
    pub appearance: PathBuf,
    pub motion: PathBuf,
    pub audio: PathBuf,
    pub captions: Vec<Vec<String>>,
    pub field: usize,
    pub caption_embeddings: Option<Vec<Vec<f32>>>,
    pub video_embedding: Option<Vec<f32>>,
}

impl CorpusItem {
    pub fn load_features(&self) -> Result<[FeatureSequence; 3]> {
        Ok([
            spft::load_feature_tensor(&self.appearance)?,
            spft::load_feature_tensor(&self.motion)?,
            spft::load_feature_tensor(&self.audio)?,
        ])
    }

    pub fn all_tokens(&self) -> impl Iterator<Item = &String> {
        self.captions.iter().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub items: Vec<CorpusItem>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn find(&self, video_id: &str) -> Option<&CorpusItem> {
        self.items.iter().find(|i| i.video_id == video_id)
    }
}

/// Tokenizes a caption and keeps at most `l_max - 2` content tokens.
pub fn normalize_caption(text: &str, l_max: usize) -> Vec<String> {
    let mut t = tokenize(text);
    t.truncate(l_max.saturating_sub(2));
    t
}

pub fn load_manifest(path: &Path, taxonomy: &FieldTaxonomy, l_max: usize) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, root, taxonomy, l_max)
}

pub fn parse_manifest(
    text: &str,
    root: &Path,
    taxonomy: &FieldTaxonomy,
    l_max: usize,
) -> Result<Corpus> {
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: line_no,
            msg: e.to_string(),
        })?;
        items.push(parse_item(&v, line_no, root, taxonomy, l_max)?);
    }
    Ok(Corpus { items })
}

fn require<'a>(v: &'a Value, key: &str, line: usize) -> Result<&'a Value> {
    v.get(key).ok_or_else(|| Error::MissingKey {
        line,
        key: key.to_string(),
    })
}

fn str_key(v: &Value, key: &str, line: usize) -> Result<String> {
    require(v, key, line)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::Manifest {
            line,
            msg: format!("`{key}` must be a string"),
        })
}

fn resolve(root: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

fn parse_item(
    v: &Value,
    line: usize,
    root: &Path,
    taxonomy: &FieldTaxonomy,
    l_max: usize,
) -> Result<CorpusItem> {
    let video_id = str_key(v, "video_id", line)?;
    let appearance = resolve(root, &str_key(v, "appearance", line)?);
    let motion = resolve(root, &str_key(v, "motion", line)?);
    let audio = resolve(root, &str_key(v, "audio", line)?);
    let captions: Vec<Vec<String>> = require(v, "captions", line)?
        .as_array()
        .ok_or_else(|| Error::Manifest {
            line,
            msg: "`captions` must be a list".into(),
        })?
        .iter()
        .map(|c| {
            c.as_str()
                .map(|s| normalize_caption(s, l_max))
                .ok_or_else(|| Error::Manifest {
                    line,
                    msg: "captions must be strings".into(),
                })
        })
        .collect::<Result<_>>()?;
    if captions.is_empty() {
        return Err(Error::Manifest {
            line,
            msg: "item needs at least one caption".into(),
        });
    }
    let field = match require(v, "field", line)? {
        Value::Number(n) => n.as_u64().map(|n| n as usize),
        Value::String(s) => taxonomy.index_of(s),
        _ => None,
    }
    .filter(|&f| f < taxonomy.len())
    .ok_or_else(|| Error::Manifest {
        line,
        msg: format!("invalid field {}", v["field"]),
    })?;

    let caption_embeddings = match v.get("caption_embeddings") {
        None | Some(Value::Null) => None,
        Some(e) => Some(matrix_ref(e, root, line)?),
    };
    if let Some(e) = &caption_embeddings {
        if e.len() != captions.len() {
            return Err(Error::Manifest {
                line,
                msg: format!(
                    "{} caption embeddings for {} captions",
                    e.len(),
                    captions.len()
                ),
            });
        }
    }
    let video_embedding = match v.get("video_embedding") {
        None | Some(Value::Null) => None,
        Some(e) => {
            let m = matrix_ref(e, root, line)?;
            if m.len() != 1 {
                return Err(Error::Manifest {
                    line,
                    msg: "video_embedding must be a single vector".into(),
                });
            }
            m.into_iter().next()
        }
    };
    Ok(CorpusItem {
        video_id,
        appearance,
        motion,
        audio,
        captions,
        field,
        caption_embeddings,
        video_embedding,
    })
}

/// Inline vector, inline matrix, or SPFT path; always returned as rows.
fn matrix_ref(v: &Value, root: &Path, line: usize) -> Result<Vec<Vec<f32>>> {
    let bad = |msg: &str| Error::Manifest {
        line,
        msg: msg.to_string(),
    };
    match v {
        Value::String(p) => {
            let (_, t) = spft::read_tensor(&resolve(root, p))?;
            let (r, c) = t.dims2();
            Ok((0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect())
        }
        Value::Array(a) if a.iter().all(Value::is_number) => Ok(vec![a
            .iter()
            .map(|x| x.as_f64().unwrap() as f32)
            .collect()]),
        Value::Array(a) => a
            .iter()
            .map(|row| {
                row.as_array()
                    .ok_or_else(|| bad("embedding rows must be lists"))?
                    .iter()
                    .map(|x| x.as_f64().map(|f| f as f32).ok_or_else(|| bad("non-numeric embedding")))
                    .collect()
            })
            .collect(),
        _ => Err(bad("embedding must be a path or numbers")),
    }
}

/// Writes a manifest with paths relative to `root` and embeddings as SPFT
/// sidecars under `root/embeddings/`.
pub fn write_manifest(path: &Path, root: &Path, corpus: &Corpus, taxonomy: &FieldTaxonomy) -> Result<()> {
    let rel = |p: &Path| -> String {
        p.strip_prefix(root)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    };
    let mut out = Vec::new();
    for item in &corpus.items {
        let mut obj = json!({
            "video_id": item.video_id,
            "appearance": rel(&item.appearance),
            "motion": rel(&item.motion),
            "audio": rel(&item.audio),
            "captions": item.captions.iter().map(|c| c.join(" ")).collect::<Vec<_>>(),
            "field": taxonomy.names()[item.field],
        });
        if let Some(e) = &item.caption_embeddings {
            let p = root.join("embeddings").join(format!("{}.captions.spft", item.video_id));
            let t = crate::tensor::Tensor::from_rows(e)?;
            spft::write_tensor(&p, Modality::Embedding, &t)?;
            obj["caption_embeddings"] = Value::from(rel(&p));
        }
        if let Some(e) = &item.video_embedding {
            let p = root.join("embeddings").join(format!("{}.video.spft", item.video_id));
            spft::write_tensor(&p, Modality::Embedding, &crate::tensor::Tensor::row(e.clone()))?;
            obj["video_embedding"] = Value::from(rel(&p));
        }
        out.push(serde_json::to_string(&obj)?);
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for l in out {
        writeln!(f, "{l}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
