//! Checkpoint directories: `header.json`, `params.spft` and, when the model
//! was trained with retrieval, `retrieval.json`.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::io::attributes::AttributeVocabulary;
use crate::io::lexicon::{EmotionLexicon, FieldTaxonomy};
use crate::io::spft::{read_bundle, write_bundle, Modality};
use crate::io::text::Vocabulary;
use crate::model::SpectrumModel;
use crate::retrieval::EmbeddingStore;

pub const FORMAT: &str = "spectrum-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

const HEADER: &str = "header.json";
const PARAMS: &str = "params.spft";
const POOL: &str = "retrieval.json";

pub struct Checkpoint {
    pub model: SpectrumModel<f32>,
    pub pool: Option<EmbeddingStore>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save(dir: &Path, model: &SpectrumModel<f32>, pool: Option<&EmbeddingStore>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let params: Vec<Value> = model
        .store
        .names()
        .iter()
        .zip(model.store.tensors())
        .map(|(n, t)| json!({ "name": n, "shape": t.shape() }))
        .collect();
    let header = json!({
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "model_hash": model.config.model_hash(),
        "config": model.config,
        "vocab": model.vocab.tokens(),
        "attributes": model.attrs,
        "lexicon": model.lexicon.to_json(),
        "fields": model.taxonomy.names(),
        "params": params,
    });
    let mut text = serde_json::to_string_pretty(&header)?;
    text.push('\n');
    write(&dir.join(HEADER), text.as_bytes())?;
    let tensors: Vec<(Modality, &_)> = model.store.tensors().iter().map(|t| (Modality::Untyped, t)).collect();
    write_bundle(&dir.join(PARAMS), &tensors)?;
    let pool_path = dir.join(POOL);
    match pool {
        Some(p) => write(&pool_path, serde_json::to_string(p)?.as_bytes())?,
        None if pool_path.exists() => fs::remove_file(&pool_path).map_err(|e| Error::io(&pool_path, e))?,
        None => {}
    }
    Ok(())
}

fn field<'a>(h: &'a Value, key: &str) -> Result<&'a Value> {
    h.get(key)
        .ok_or_else(|| Error::Checkpoint(format!("header lacks `{key}`")))
}

/// Loads a checkpoint. When `expected` is given its architecture must hash
/// to the stored value unless `force` is set; its non-architecture sections
/// (training, decoding, ablation) replace the stored ones.
pub fn load(dir: &Path, expected: Option<&Config>, force: bool) -> Result<Checkpoint> {
    let hp = dir.join(HEADER);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let h: Value = serde_json::from_str(&text)?;
    if field(&h, "format")?.as_str() != Some(FORMAT) {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint header", hp.display())));
    }
    let version = field(&h, "version")?.as_u64().unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Version(version));
    }
    let mut config: Config = serde_json::from_value(field(&h, "config")?.clone())?;
    let stored_hash = field(&h, "model_hash")?.as_str().unwrap_or_default().to_string();
    if config.model_hash() != stored_hash {
        return Err(Error::Checkpoint("header config does not match its hash".into()));
    }
    if let Some(exp) = expected {
        if exp.model_hash() != stored_hash && !force {
            return Err(Error::Checkpoint(format!(
                "architecture hash {} differs from checkpoint {}; pass --force to override",
                exp.model_hash(),
                stored_hash
            )));
        }
        let model = config.model.clone();
        config = exp.clone();
        config.model = model;
    }
    let vocab_tokens: Vec<String> = serde_json::from_value(field(&h, "vocab")?.clone())?;
    let attrs: AttributeVocabulary = serde_json::from_value(field(&h, "attributes")?.clone())?;
    let lexicon = EmotionLexicon::from_json(&field(&h, "lexicon")?.to_string())?;
    let fields: Vec<String> = serde_json::from_value(field(&h, "fields")?.clone())?;
    let tensors = read_bundle(&dir.join(PARAMS))?.into_iter().map(|(_, t)| t).collect();
    let model = SpectrumModel::from_tensors(
        config,
        Vocabulary::from_tokens(vocab_tokens),
        attrs.reindex(),
        lexicon,
        FieldTaxonomy::new(fields)?,
        tensors,
    )?;
    let pp = dir.join(POOL);
    let pool = if pp.exists() {
        let t = fs::read_to_string(&pp).map_err(|e| Error::io(&pp, e))?;
        Some(serde_json::from_str(&t)?)
    } else {
        None
    };
    Ok(Checkpoint { model, pool })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::attributes::{Attribute, AttributeKind};

    fn model() -> SpectrumModel<f32> {
        let mut c = Config::default();
        c.model.d_h = 8;
        c.model.heads = 2;
        c.model.d_b = 4;
        c.model.n_layers = 1;
        let caps = [vec!["a".to_string(), "dog".to_string()]];
        let vocab = Vocabulary::build(caps.iter().map(Vec::as_slice));
        let attrs = AttributeVocabulary::new(vec![Attribute {
            word: "dog".into(),
            kind: AttributeKind::Factual,
        }]);
        SpectrumModel::new(c, vocab, attrs, EmotionLexicon::default(), FieldTaxonomy::default()).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        save(dir.path(), &m, None).unwrap();
        let back = load(dir.path(), None, false).unwrap();
        assert_eq!(back.model.store.tensors(), m.store.tensors());
        assert_eq!(back.model.store.names(), m.store.names());
        assert_eq!(back.model.config, m.config);
        assert_eq!(back.model.vocab.tokens(), m.vocab.tokens());
        assert!(back.pool.is_none());
        let again = tempfile::tempdir().unwrap();
        save(again.path(), &back.model, None).unwrap();
        for f in [HEADER, PARAMS] {
            assert_eq!(
                fs::read(dir.path().join(f)).unwrap(),
                fs::read(again.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn hash_mismatch_refused_unless_forced() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        save(dir.path(), &m, None).unwrap();
        let mut other = m.config.clone();
        other.model.top_k_factual = 7;
        assert!(matches!(load(dir.path(), Some(&other), false), Err(Error::Checkpoint(_))));
        let forced = load(dir.path(), Some(&other), true).unwrap();
        assert_eq!(forced.model.config.model, m.config.model);
        // non-architecture overrides are taken from the caller
        let mut ab = m.config.clone();
        ab.decode.beam = 2;
        assert_eq!(load(dir.path(), Some(&ab), false).unwrap().model.config.decode.beam, 2);
    }
}
