//! Plain-text word vectors: one `word v1 v2 ... vd` entry per line.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub fn parse_word_vectors(text: &str, width: usize) -> Result<HashMap<String, Vec<f32>>> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let v: Vec<f32> = parts
            .map(|p| p.parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Invalid(format!("vector line {}: {e}", i + 1)))?;
        if v.len() != width {
            return Err(Error::Invalid(format!(
                "vector line {}: expected {width} values, found {}",
                i + 1,
                v.len()
            )));
        }
        out.insert(word.to_lowercase(), v);
    }
    Ok(out)
}

pub fn load_word_vectors(path: &Path, width: usize) -> Result<HashMap<String, Vec<f32>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_word_vectors(&text, width)
}
