//! Emotion bags and the content-field taxonomy.

use std::collections::HashMap;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmotionCategory {
    pub name: String,
    pub words: Vec<String>,
}

/// Coarse emotion categories, each a bag of disjoint fine words.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionLexicon {
    categories: Vec<EmotionCategory>,
    word_to_category: HashMap<String, usize>,
}

impl EmotionLexicon {
    pub fn new(categories: Vec<EmotionCategory>) -> Result<Self> {
        let mut word_to_category = HashMap::new();
        for (i, c) in categories.iter().enumerate() {
            if c.words.is_empty() {
                return Err(Error::Invalid(format!("emotion bag `{}` is empty", c.name)));
            }
            for w in &c.words {
                if let Some(prev) = word_to_category.insert(w.to_lowercase(), i) {
                    return Err(Error::Invalid(format!(
                        "fine word `{w}` appears in bags `{}` and `{}`",
                        categories[prev].name, c.name
                    )));
                }
            }
        }
        Ok(Self {
            categories,
            word_to_category,
        })
    }

    /// Parses `{category: [fine words]}`, keeping file order.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Invalid("lexicon must be a JSON object".into()))?;
        let mut cats = Vec::with_capacity(obj.len());
        for (name, words) in obj {
            let words = words
                .as_array()
                .ok_or_else(|| Error::Invalid(format!("bag `{name}` must be a list")))?
                .iter()
                .map(|w| {
                    w.as_str()
                        .map(str::to_lowercase)
                        .ok_or_else(|| Error::Invalid(format!("bag `{name}` has a non-string")))
                })
                .collect::<Result<Vec<_>>>()?;
            cats.push(EmotionCategory {
                name: name.clone(),
                words,
            });
        }
        Self::new(cats)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Value {
        let mut m = serde_json::Map::new();
        for c in &self.categories {
            m.insert(c.name.clone(), Value::from(c.words.clone()));
        }
        Value::Object(m)
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn categories(&self) -> &[EmotionCategory] {
        &self.categories
    }

    pub fn category_of(&self, word: &str) -> Option<usize> {
        self.word_to_category.get(word).copied()
    }

    pub fn is_emotion_word(&self, word: &str) -> bool {
        self.word_to_category.contains_key(word)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.name == name)
    }

    /// Fine-word counts per category over a token sequence.
    pub fn counts<'a>(&self, tokens: impl IntoIterator<Item = &'a String>) -> Vec<usize> {
        let mut c = vec![0; self.len()];
        for t in tokens {
            if let Some(k) = self.category_of(t) {
                c[k] += 1;
            }
        }
        c
    }
}

impl Default for EmotionLexicon {
    fn default() -> Self {
        Self::from_json(include_str!("../../data/lexicon.json")).expect("bundled lexicon is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldTaxonomy {
    fields: Vec<String>,
}

impl FieldTaxonomy {
    pub fn new(fields: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for f in &fields {
            if !seen.insert(f.as_str()) {
                return Err(Error::Invalid(format!("duplicate field `{f}`")));
            }
        }
        if fields.is_empty() {
            return Err(Error::Invalid("field taxonomy is empty".into()));
        }
        Ok(Self { fields })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.fields
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f == name)
    }
}

impl Default for FieldTaxonomy {
    fn default() -> Self {
        Self::from_json(include_str!("../../data/fields.json")).expect("bundled taxonomy is valid")
    }
}
