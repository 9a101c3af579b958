//! Deterministic synthetic corpora.
//!
//! Every video plants a field, an emotion bag with one of its fine words, and a
//! noun/verb/scene drawn from the field's word pool. Feature tokens are sums of
//! per-modality concept prototypes plus Gaussian noise, and retrieval
//! embeddings are sums of per-concept vectors, so planted attributes are
//! linearly recoverable and videos sharing concepts retrieve each other.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::lexicon::{EmotionLexicon, FieldTaxonomy};
use crate::io::manifest::{write_manifest, Corpus, CorpusItem};
use crate::io::spft::{self, Modality};
use crate::tensor::Tensor;

const NOUNS: &[&str] = &[
    "guitarist", "drummer", "singer", "woman", "man", "crowd", "gamer", "player", "avatar",
    "athlete", "runner", "boxer", "reporter", "politician", "anchor", "teacher", "student",
    "professor", "actor", "host", "comedian", "villain", "hero", "cartoon", "robot", "dragon",
    "car", "truck", "motorcycle", "mechanic", "builder", "carpenter", "tourist", "hiker",
    "sailor", "scientist", "engineer", "astronaut", "dog", "cat", "horse", "child", "baby",
    "toddler", "narrator", "explorer", "diver", "waiter", "customer", "baker", "chef", "cook",
    "grandmother", "model", "stylist", "designer", "salesman", "mascot", "presenter", "girl",
];

const VERBS: &[&str] = &[
    "playing", "drumming", "singing", "dancing", "talking", "cheering", "gaming", "clicking",
    "jumping", "running", "sprinting", "punching", "reporting", "speaking", "debating",
    "teaching", "writing", "explaining", "acting", "laughing", "joking", "fighting", "flying",
    "transforming", "driving", "racing", "repairing", "fixing", "building", "hammering",
    "walking", "climbing", "sailing", "experimenting", "measuring", "floating", "barking",
    "purring", "galloping", "crawling", "crying", "giggling", "narrating", "swimming",
    "diving", "serving", "ordering", "eating", "baking", "frying", "stirring", "posing",
    "styling", "sewing", "selling", "waving", "presenting", "smiling", "painting", "reading",
];

const SCENES: &[&str] = &[
    "stage", "concert", "studio", "arena", "screen", "stadium", "track", "ring", "newsroom",
    "parliament", "classroom", "library", "theater", "set", "kingdom", "castle", "garage",
    "highway", "workshop", "street", "mountain", "beach", "laboratory", "station", "park",
    "farm", "nursery", "playground", "forest", "ocean", "restaurant", "cafe", "kitchen",
    "bakery", "salon", "runway", "market", "mall", "gallery", "museum",
];

const TEMPLATES: &[&str] = &[
    "a {emo} {noun} is {verb} in the {scene}",
    "the {noun} is {verb} {emo} at the {scene}",
    "a {noun} {verb} {emo} on the {scene}",
    "the {emo} {noun} {verb} in a {scene}",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub videos: usize,
    pub captions_per_video: usize,
    pub d_b: usize,
    pub d_r: usize,
    pub n_appearance: usize,
    pub n_motion: usize,
    pub n_audio: usize,
    /// Number of taxonomy fields in use.
    pub fields: usize,
    /// Number of emotion bags in use.
    pub categories: usize,
    pub words_per_category: usize,
    pub nouns_per_field: usize,
    pub verbs_per_field: usize,
    pub scenes_per_field: usize,
    pub noise: f64,
    pub embedding_noise: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            videos: 200,
            captions_per_video: 3,
            d_b: 32,
            d_r: 64,
            n_appearance: 8,
            n_motion: 4,
            n_audio: 4,
            fields: 5,
            categories: 8,
            words_per_category: 2,
            nouns_per_field: 2,
            verbs_per_field: 2,
            scenes_per_field: 2,
            noise: 0.5,
            embedding_noise: 0.3,
            test_fraction: 0.2,
        }
    }
}

/// Ground truth behind one synthetic video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    pub video_id: String,
    pub field: usize,
    pub category: usize,
    pub emotion_word: String,
    pub noun: String,
    pub verb: String,
    pub scene: String,
}

impl Planted {
    pub fn words(&self) -> [&str; 4] {
        [&self.emotion_word, &self.noun, &self.verb, &self.scene]
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Corpus,
    pub test: Corpus,
    pub planted: Vec<Planted>,
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
}

#[derive(Clone, Copy)]
enum Concept {
    Noun(usize),
    Verb(usize),
    Scene(usize),
    Word(usize),
    Category(usize),
    Field(usize),
}

struct Prototypes {
    width: usize,
    nouns: Vec<Vec<f32>>,
    verbs: Vec<Vec<f32>>,
    scenes: Vec<Vec<f32>>,
    words: Vec<Vec<f32>>,
    categories: Vec<Vec<f32>>,
    fields: Vec<Vec<f32>>,
}

impl Prototypes {
    fn draw(rng: &mut Pcg64, width: usize, counts: [usize; 6]) -> Self {
        let mut table = |n: usize| -> Vec<Vec<f32>> {
            (0..n)
                .map(|_| (0..width).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
                .collect()
        };
        Self {
            width,
            nouns: table(counts[0]),
            verbs: table(counts[1]),
            scenes: table(counts[2]),
            words: table(counts[3]),
            categories: table(counts[4]),
            fields: table(counts[5]),
        }
    }

    fn get(&self, c: Concept) -> &[f32] {
        match c {
            Concept::Noun(i) => &self.nouns[i],
            Concept::Verb(i) => &self.verbs[i],
            Concept::Scene(i) => &self.scenes[i],
            Concept::Word(i) => &self.words[i],
            Concept::Category(i) => &self.categories[i],
            Concept::Field(i) => &self.fields[i],
        }
    }

    fn mix(&self, rng: &mut Pcg64, parts: &[(Concept, f32)], noise: f64) -> Vec<f32> {
        let mut v = vec![0f32; self.width];
        for &(c, w) in parts {
            for (x, p) in v.iter_mut().zip(self.get(c)) {
                *x += w * p;
            }
        }
        for x in v.iter_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *x += (noise * n) as f32;
        }
        v
    }
}

fn spread(k: usize, n: usize, total: usize) -> usize {
    k * total / n
}

/// Generates the corpus, writing features, embeddings and `train.jsonl` /
/// `test.jsonl` under `out_dir`.
pub fn synth_corpus(
    config: &SynthConfig,
    seed: u64,
    lexicon: &EmotionLexicon,
    taxonomy: &FieldTaxonomy,
    out_dir: &Path,
) -> Result<SynthCorpus> {
    let c = config;
    if c.videos == 0 || c.captions_per_video == 0 || c.d_b == 0 || c.d_r == 0 {
        return Err(Error::Config("synth counts must be positive".into()));
    }
    if c.fields == 0 || c.fields > taxonomy.len() || c.categories == 0 || c.categories > lexicon.len() {
        return Err(Error::Config(format!(
            "synth uses {} fields / {} bags but taxonomy has {} and lexicon {}",
            c.fields,
            c.categories,
            taxonomy.len(),
            lexicon.len()
        )));
    }
    if c.fields * c.nouns_per_field > NOUNS.len()
        || c.fields * c.verbs_per_field > VERBS.len()
        || c.fields * c.scenes_per_field > SCENES.len()
        || c.nouns_per_field * c.verbs_per_field * c.scenes_per_field == 0
    {
        return Err(Error::Config("synth word pools exhausted".into()));
    }
    let fields: Vec<usize> = (0..c.fields).map(|k| spread(k, c.fields, taxonomy.len())).collect();
    let cats: Vec<usize> = (0..c.categories)
        .map(|k| spread(k, c.categories, lexicon.len()))
        .collect();
    // (category, fine word) pairs in use
    let mut words: Vec<(usize, String)> = Vec::new();
    for &cat in &cats {
        let bag = &lexicon.categories()[cat].words;
        for w in bag.iter().take(c.words_per_category.max(1)) {
            words.push((cat, w.clone()));
        }
    }

    let mut rng = Pcg64::seed_from_u64(seed);
    let counts = [
        c.fields * c.nouns_per_field,
        c.fields * c.verbs_per_field,
        c.fields * c.scenes_per_field,
        words.len(),
        c.categories,
        c.fields,
    ];
    let protos: Vec<Prototypes> = (0..3).map(|_| Prototypes::draw(&mut rng, c.d_b, counts)).collect();
    let retrieval = Prototypes::draw(&mut rng, c.d_r, counts);

    let feat_dir = out_dir.join("features");
    let n_test = ((c.videos as f64) * c.test_fraction).round() as usize;
    let n_test = n_test.min(c.videos.saturating_sub(1));
    let mut train = Corpus::default();
    let mut test = Corpus::default();
    let mut planted = Vec::with_capacity(c.videos);

    for v in 0..c.videos {
        let fk = rng.gen_range(0..c.fields);
        let ck = rng.gen_range(0..c.categories);
        let per = c.words_per_category.max(1).min(lexicon.categories()[cats[ck]].words.len());
        let wk = words.iter().position(|(cat, _)| *cat == cats[ck]).unwrap() + rng.gen_range(0..per);
        let nk = fk * c.nouns_per_field + rng.gen_range(0..c.nouns_per_field);
        let vk = fk * c.verbs_per_field + rng.gen_range(0..c.verbs_per_field);
        let sk = fk * c.scenes_per_field + rng.gen_range(0..c.scenes_per_field);
        let id = format!("vid{v:04}");

        let p = Planted {
            video_id: id.clone(),
            field: fields[fk],
            category: cats[ck],
            emotion_word: words[wk].1.clone(),
            noun: NOUNS[nk].to_string(),
            verb: VERBS[vk].to_string(),
            scene: SCENES[sk].to_string(),
        };

        let modal_parts: [Vec<(Concept, f32)>; 3] = [
            vec![
                (Concept::Noun(nk), 1.0),
                (Concept::Scene(sk), 1.0),
                (Concept::Field(fk), 0.5),
                (Concept::Word(wk), 0.7),
            ],
            vec![
                (Concept::Verb(vk), 1.0),
                (Concept::Word(wk), 0.7),
                (Concept::Noun(nk), 0.3),
            ],
            vec![
                (Concept::Category(ck), 1.0),
                (Concept::Word(wk), 0.5),
                (Concept::Field(fk), 0.7),
            ],
        ];
        let token_counts = [c.n_appearance, c.n_motion, c.n_audio];
        let modalities = [Modality::Appearance, Modality::Motion, Modality::Audio];
        let suffix = ["app", "mot", "aud"];
        let mut paths = Vec::with_capacity(3);
        for m in 0..3 {
            let rows: Vec<Vec<f32>> = (0..token_counts[m])
                .map(|_| protos[m].mix(&mut rng, &modal_parts[m], c.noise))
                .collect();
            let path = feat_dir.join(format!("{id}.{}.spft", suffix[m]));
            spft::write_tensor(&path, modalities[m], &Tensor::from_rows(&rows)?)?;
            paths.push(path);
        }

        let all: Vec<(Concept, f32)> = vec![
            (Concept::Noun(nk), 1.0),
            (Concept::Verb(vk), 1.0),
            (Concept::Scene(sk), 1.0),
            (Concept::Word(wk), 1.0),
            (Concept::Category(ck), 1.0),
            (Concept::Field(fk), 1.0),
        ];
        let video_embedding = retrieval.mix(&mut rng, &all, c.embedding_noise);
        let captions: Vec<Vec<String>> = (0..c.captions_per_video)
            .map(|k| render(TEMPLATES[k % TEMPLATES.len()], &p))
            .collect();
        let caption_embeddings = (0..c.captions_per_video)
            .map(|_| retrieval.mix(&mut rng, &all, c.embedding_noise))
            .collect();

        let item = CorpusItem {
            video_id: id,
            appearance: paths[0].clone(),
            motion: paths[1].clone(),
            audio: paths[2].clone(),
            captions,
            field: p.field,
            caption_embeddings: Some(caption_embeddings),
            video_embedding: Some(video_embedding),
        };
        if v >= c.videos - n_test {
            test.items.push(item);
        } else {
            train.items.push(item);
        }
        planted.push(p);
    }

    let train_manifest = out_dir.join("train.jsonl");
    let test_manifest = out_dir.join("test.jsonl");
    write_manifest(&train_manifest, out_dir, &train, taxonomy)?;
    write_manifest(&test_manifest, out_dir, &test, taxonomy)?;
    let planted_path = out_dir.join("planted.json");
    std::fs::write(&planted_path, serde_json::to_vec_pretty(&planted)?)
        .map_err(|e| Error::io(&planted_path, e))?;
    Ok(SynthCorpus {
        train,
        test,
        planted,
        train_manifest,
        test_manifest,
    })
}

fn render(template: &str, p: &Planted) -> Vec<String> {
    template
        .replace("{emo}", &p.emotion_word)
        .replace("{noun}", &p.noun)
        .replace("{verb}", &p.verb)
        .replace("{scene}", &p.scene)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::attributes::{attribute_labels, build_attribute_vocab};
    use crate::io::text::Stopwords;

    fn small() -> SynthConfig {
        SynthConfig {
            videos: 12,
            ..Default::default()
        }
    }

    #[test]
    fn word_pools_are_clean() {
        let lex = EmotionLexicon::default();
        let stop = Stopwords::default();
        for w in NOUNS.iter().chain(VERBS).chain(SCENES) {
            assert!(!lex.is_emotion_word(w) && !stop.contains(w), "{w}");
        }
        let mut all: Vec<&str> = NOUNS.iter().chain(VERBS).chain(SCENES).copied().collect();
        all.sort();
        let n = all.len();
        all.dedup();
        assert_eq!(all.len(), n);
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let lex = EmotionLexicon::default();
        let tax = FieldTaxonomy::default();
        synth_corpus(&small(), 5, &lex, &tax, a.path()).unwrap();
        synth_corpus(&small(), 5, &lex, &tax, b.path()).unwrap();
        for f in ["train.jsonl", "test.jsonl", "features/vid0003.mot.spft", "embeddings/vid0011.video.spft"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn planted_words_are_labelled() {
        let dir = tempfile::tempdir().unwrap();
        let lex = EmotionLexicon::default();
        let s = synth_corpus(&small(), 9, &lex, &FieldTaxonomy::default(), dir.path()).unwrap();
        let all = Corpus {
            items: s.train.items.iter().chain(&s.test.items).cloned().collect(),
        };
        let attrs = build_attribute_vocab(&all, &lex, &Stopwords::default(), 300).unwrap();
        for (item, p) in all.items.iter().zip(&s.planted) {
            let labels = attribute_labels(item, &attrs);
            let on: Vec<&str> = (0..attrs.len())
                .filter(|&i| labels[i] == 1.0)
                .map(|i| attrs.attrs()[i].word.as_str())
                .collect();
            let mut want: Vec<&str> = p.words().to_vec();
            want.sort();
            let mut got = on.clone();
            got.sort();
            assert_eq!(got, want);
            for cap in &item.captions {
                assert!(cap.contains(&p.emotion_word));
            }
        }
    }
}
