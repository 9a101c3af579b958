//! Feature tensors, manifests, vocabularies, lexicon data and synthetic corpora.

pub mod attributes;
pub mod lexicon;
pub mod manifest;
pub mod spft;
pub mod synth;
pub mod text;
pub mod vectors;

pub use attributes::{
    attribute_labels, build_attribute_vocab, emotion_distribution, Attribute, AttributeKind,
    AttributeVocabulary, EmotionDistribution,
};
pub use lexicon::{EmotionLexicon, FieldTaxonomy};
pub use manifest::{load_manifest, Corpus, CorpusItem};
pub use spft::{load_feature_tensor, FeatureSequence, Modality};
pub use synth::{synth_corpus, SynthConfig};
pub use text::{tokenize, Stopwords, Vocabulary};
