//! The full captioner: encoders, concept investigation and decoder wired
//! over one parameter store.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_pcg::Pcg64;

use crate::autodiff::{Graph, Var};
use crate::concept::{
    attribute_embed, field_logits, holistic_vectors, m2s_loss, pool_memory, predict_rho_em, register_attribute_table,
    vtai_logits, CfbParams, FieldHead, VtaiParams,
};
use crate::config::{Config, RhoMode};
use crate::decoder::{
    beam_search, caption_loss, decode_step, decoder_forward, log_probs_of, BeamConfig, DecoderParams, Hypothesis,
    StepScorer,
};
use crate::encoders::{assemble_memory, encode_modality, encode_text, fuse_video, EncoderMemory, EncoderParams};
use crate::error::{Error, Result};
use crate::io::attributes::{attribute_labels, emotion_distribution, AttributeVocabulary};
use crate::io::lexicon::{EmotionLexicon, FieldTaxonomy};
use crate::io::manifest::CorpusItem;
use crate::io::spft::FeatureSequence;
use crate::io::text::{Vocabulary, BOS, EOS};
use crate::params::{normal, ParamId, ParamStore};
use crate::retrieval::EmbeddingStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Handles {
    /// Appearance, motion, audio, text.
    pub encoders: [EncoderParams; 4],
    pub text_emb: ParamId,
    pub vtai: VtaiParams,
    pub field_head: FieldHead,
    pub cfb: CfbParams,
    pub aeb_table: ParamId,
    pub decoder: DecoderParams,
}

#[derive(Debug, Clone)]
pub struct SpectrumModel<T: Scalar> {
    pub config: Config,
    pub vocab: Vocabulary,
    pub attrs: AttributeVocabulary,
    pub lexicon: EmotionLexicon,
    pub taxonomy: FieldTaxonomy,
    pub store: ParamStore<T>,
    handles: Handles,
    groups: Vec<Vec<usize>>,
}

/// An item with features loaded and every text field turned into ids.
#[derive(Debug, Clone)]
pub struct PreparedItem<T> {
    pub video_id: String,
    pub features: [Tensor<T>; 3],
    /// Retrieved captions, encoded.
    pub text: Vec<Vec<usize>>,
    /// Reference captions framed with bos/eos.
    pub captions: Vec<Vec<usize>>,
    pub references: Vec<Vec<String>>,
    pub labels: Vec<f64>,
    pub rho_em: Vec<f64>,
    pub field: usize,
}

impl<T: Scalar> PreparedItem<T> {
    pub fn cast<U: Scalar>(&self) -> PreparedItem<U> {
        PreparedItem {
            video_id: self.video_id.clone(),
            features: [self.features[0].cast(), self.features[1].cast(), self.features[2].cast()],
            text: self.text.clone(),
            captions: self.captions.clone(),
            references: self.references.clone(),
            labels: self.labels.clone(),
            rho_em: self.rho_em.clone(),
            field: self.field,
        }
    }
}

/// Graph nodes of one training example.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub m2s: Var,
    pub cap: Var,
    pub fld: Var,
    /// `m2s + cap`.
    pub total: Var,
    /// `total + lambda_fld * fld`, what the optimizer descends.
    pub objective: Var,
    pub pr: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossTerms {
    pub m2s: f64,
    pub cap: f64,
    pub fld: f64,
    pub total: f64,
    pub objective: f64,
}

impl LossVars {
    pub fn values<T: Scalar>(&self, g: &Graph<T>) -> LossTerms {
        let v = |x: Var| g.value(x).item().f64();
        LossTerms {
            m2s: v(self.m2s),
            cap: v(self.cap),
            fld: v(self.fld),
            total: v(self.total),
            objective: v(self.objective),
        }
    }
}

/// Everything the decoder needs for one video at inference time.
#[derive(Debug, Clone)]
pub struct VideoContext<T> {
    pub kv: Tensor<T>,
    pub memory_rows: usize,
    pub l_fct: Option<Tensor<T>>,
    pub l_em: Option<Tensor<T>>,
    pub pr: Vec<f64>,
    pub rho_em: Vec<f64>,
    pub rho_fct: Vec<f64>,
    /// Attribute index of each attribute row, in rank order.
    pub attribute_rows: Vec<usize>,
}

pub struct ContextScorer<'a, T: Scalar> {
    model: &'a SpectrumModel<T>,
    ctx: &'a VideoContext<T>,
}

impl<T: Scalar> StepScorer for ContextScorer<'_, T> {
    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::with_params(&self.model.store, false);
        let kv = g.constant(self.ctx.kv.clone());
        let lf = self.ctx.l_fct.clone().map(|t| g.constant(t));
        let le = self.ctx.l_em.clone().map(|t| g.constant(t));
        let logits = decode_step(&mut g, prefix, kv, lf, le, &self.model.handles.decoder)?;
        Ok(log_probs_of(&logits))
    }
}

fn register_all<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut Pcg64,
    config: &Config,
    vocab: usize,
    n_att: usize,
    n_fld: usize,
    n_ctg: usize,
) -> Result<Handles> {
    let m = &config.model;
    let (d_b, d_h) = (m.d_b, m.d_h);
    let encoders = [
        EncoderParams::register(store, rng, "enc.appearance", d_b, d_h),
        EncoderParams::register(store, rng, "enc.motion", d_b, d_h),
        EncoderParams::register(store, rng, "enc.audio", d_b, d_h),
        EncoderParams::register(store, rng, "enc.text", d_b, d_h),
    ];
    let text_emb = store.add("enc.text_emb", normal(rng, vocab, d_b, 0.02));
    let vtai = VtaiParams::register(store, rng, d_h, n_att);
    let field_head = FieldHead::register(store, rng, d_h, n_fld);
    let cfb = CfbParams::register(store, rng, n_fld, n_ctg, m.d_e(), d_h);
    let aeb_table = register_attribute_table(store, rng, n_att, d_h);
    let decoder = DecoderParams::register(store, rng, vocab, d_h, m.n_layers, m.heads, m.l_max)?;
    Ok(Handles {
        encoders,
        text_emb,
        vtai,
        field_head,
        cfb,
        aeb_table,
        decoder,
    })
}

impl<T: Scalar> SpectrumModel<T> {
    /// Fresh parameters drawn from `config.train.seed`.
    pub fn new(
        config: Config,
        vocab: Vocabulary,
        attrs: AttributeVocabulary,
        lexicon: EmotionLexicon,
        taxonomy: FieldTaxonomy,
    ) -> Result<Self> {
        config.validate()?;
        if attrs.is_empty() {
            return Err(Error::EmptyAttributeSet);
        }
        let mut store = ParamStore::new();
        let mut rng = Pcg64::seed_from_u64(config.train.seed);
        let handles = register_all(
            &mut store,
            &mut rng,
            &config,
            vocab.len(),
            attrs.len(),
            taxonomy.len(),
            lexicon.len(),
        )?;
        let groups = attrs.category_groups(lexicon.len());
        Ok(Self {
            config,
            vocab,
            attrs,
            lexicon,
            taxonomy,
            store,
            handles,
            groups,
        })
    }

    /// Rebuilds a model around saved tensors; shapes must match the layout
    /// implied by `config` and the vocabularies.
    pub fn from_tensors(
        config: Config,
        vocab: Vocabulary,
        attrs: AttributeVocabulary,
        lexicon: EmotionLexicon,
        taxonomy: FieldTaxonomy,
        tensors: Vec<Tensor<T>>,
    ) -> Result<Self> {
        let mut m = Self::new(config, vocab, attrs, lexicon, taxonomy)?;
        m.store.load_tensors(tensors)?;
        Ok(m)
    }

    pub fn cast<U: Scalar>(&self) -> SpectrumModel<U> {
        SpectrumModel {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            attrs: self.attrs.clone(),
            lexicon: self.lexicon.clone(),
            taxonomy: self.taxonomy.clone(),
            store: self.store.cast(),
            handles: self.handles.clone(),
            groups: self.groups.clone(),
        }
    }

    pub fn handles(&self) -> &Handles {
        &self.handles
    }

    pub fn category_groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Overwrites text embedding rows for words present in `vectors`;
    /// returns how many rows were replaced.
    pub fn load_text_vectors(&mut self, vectors: &HashMap<String, Vec<f32>>) -> Result<usize> {
        let d_b = self.config.model.d_b;
        let id = self.handles.text_emb;
        let mut n = 0;
        for (i, tok) in self.vocab.tokens().iter().enumerate() {
            if let Some(v) = vectors.get(tok) {
                if v.len() != d_b {
                    return Err(Error::shape("text vectors", &[d_b], &[v.len()]));
                }
                let t = self.store.get_mut(id);
                for (j, &x) in v.iter().enumerate() {
                    t.data_mut()[i * d_b + j] = T::of(x as f64);
                }
                n += 1;
            }
        }
        Ok(n)
    }

    /// Loads features and encodes every text field of `item`.
    pub fn prepare(&self, item: &CorpusItem, retrieved: &[Vec<String>]) -> Result<PreparedItem<T>> {
        self.prepare_loaded(item, item.load_features()?, retrieved)
    }

    /// As [`prepare`](Self::prepare), with the features already in memory;
    /// the item's paths are ignored.
    pub fn prepare_loaded(
        &self,
        item: &CorpusItem,
        feats: [FeatureSequence; 3],
        retrieved: &[Vec<String>],
    ) -> Result<PreparedItem<T>> {
        let d_b = self.config.model.d_b;
        for f in &feats {
            if f.width() != d_b {
                return Err(Error::shape(
                    "features",
                    &[f.tokens(), d_b],
                    f.matrix.shape(),
                ));
            }
        }
        let [a, m, au] = feats;
        let l_max = self.config.model.l_max;
        let captions = item
            .captions
            .iter()
            .map(|c| {
                let mut f = self.vocab.frame(c);
                if f.len() > l_max {
                    f.truncate(l_max - 1);
                    f.push(EOS);
                }
                f
            })
            .collect();
        let dist = emotion_distribution(item, &self.lexicon);
        Ok(PreparedItem {
            video_id: item.video_id.clone(),
            features: [a.matrix.cast(), m.matrix.cast(), au.matrix.cast()],
            text: retrieved.iter().map(|c| self.vocab.encode(c)).collect(),
            captions,
            references: item.captions.clone(),
            labels: attribute_labels(item, &self.attrs),
            rho_em: dist.probs,
            field: item.field,
        })
    }

    pub fn encode<'g>(&'g self, g: &mut Graph<'g, T>, item: &PreparedItem<T>) -> Result<EncoderMemory> {
        let mask = self.config.ablation.mask;
        let enc = &self.handles.encoders;
        let modality = |g: &mut Graph<'g, T>, on: bool, k: usize| -> Result<Option<Var>> {
            if !on || item.features[k].rows() == 0 {
                return Ok(None);
            }
            let x = g.constant(item.features[k].clone());
            encode_modality(g, x, &enc[k]).map(Some)
        };
        let app = modality(g, mask.appearance, 0)?;
        let mot = modality(g, mask.motion, 1)?;
        let aud = modality(g, mask.audio, 2)?;
        let visual = fuse_video(g, app, mot)?;
        let text = if mask.text && !item.text.is_empty() {
            Some(encode_text(g, &item.text, self.handles.text_emb.into(), &enc[3])?)
        } else {
            None
        };
        assemble_memory(g, visual, aud, text)
    }

    fn holistic<'g>(
        &'g self,
        g: &mut Graph<'g, T>,
        rho_fct: Var,
        rho_em: Var,
    ) -> Result<(Option<Var>, Option<Var>)> {
        let ab = &self.config.ablation;
        if !ab.cfb {
            return Ok((None, None));
        }
        let (lf, le) = holistic_vectors(g, rho_fct, rho_em, &self.handles.cfb)?;
        Ok((ab.use_field().then_some(lf), ab.use_emotion().then_some(le)))
    }

    /// Training loss of reference caption `caption` of `item`.
    pub fn forward<'g>(&'g self, g: &mut Graph<'g, T>, item: &PreparedItem<T>, caption: usize) -> Result<LossVars> {
        let framed = item
            .captions
            .get(caption)
            .ok_or(Error::Index {
                index: caption,
                len: item.captions.len(),
            })?
            .clone();
        let h = &self.handles;
        let mem = self.encode(g, item)?;
        let x = pool_memory(g, &mem)?;
        let logits = vtai_logits(g, x, &h.vtai)?;
        let pr = g.sigmoid(logits);
        let m2s = m2s_loss(g, pr, &item.labels)?;

        let mode = self.config.ablation.rho_mode;
        let x_field = match mode {
            // the field head learns beside the model without feeding it
            RhoMode::GroundTruth => g.constant(g.value(x).clone()),
            RhoMode::Predicted => x,
        };
        let fl = field_logits(g, x_field, &h.field_head)?;
        let fld = g.cross_entropy(fl, &[item.field])?;

        let (rho_fct, rho_em) = match mode {
            RhoMode::GroundTruth => {
                let mut one = vec![T::zero(); self.taxonomy.len()];
                one[item.field] = T::one();
                let em: Vec<T> = item.rho_em.iter().map(|&p| T::of(p)).collect();
                (g.constant(Tensor::row(one)), g.constant(Tensor::row(em)))
            }
            RhoMode::Predicted => (g.softmax_rows(fl, false)?, predict_rho_em(g, logits, &self.groups)?),
        };
        let (l_fct, l_em) = self.holistic(g, rho_fct, rho_em)?;
        let k = self.config.effective_k_top(self.attrs.len());
        let (a_emb, _) = attribute_embed(g, pr, h.aeb_table.into(), k)?;
        let d_h = self.config.model.d_h;
        let kv = g.concat_rows(&[mem.matrix, a_emb], d_h)?;
        let cap = caption_loss(g, &framed, kv, l_fct, l_em, &h.decoder)?;
        let total = g.add(m2s, cap)?;
        let aux = g.scale(fld, self.config.train.lambda_fld);
        let objective = g.add(total, aux)?;
        Ok(LossVars {
            m2s,
            cap,
            fld,
            total,
            objective,
            pr,
        })
    }

    /// Loss values without building gradients.
    pub fn loss_terms(&self, item: &PreparedItem<T>, caption: usize) -> Result<LossTerms> {
        let mut g = Graph::with_params(&self.store, false);
        let v = self.forward(&mut g, item, caption)?;
        Ok(v.values(&g))
    }

    /// Loss values plus per-parameter gradients of `objective`.
    pub fn gradients(&self, item: &PreparedItem<T>, caption: usize) -> Result<(LossTerms, Vec<Option<Tensor<T>>>)> {
        let mut g = Graph::with_params(&self.store, true);
        let v = self.forward(&mut g, item, caption)?;
        let grads = g.backward(v.objective)?;
        Ok((v.values(&g), grads.param_grads()))
    }

    /// Attribute probabilities for an item.
    pub fn predict_attributes(&self, item: &PreparedItem<T>) -> Result<Vec<f64>> {
        let mut g = Graph::with_params(&self.store, false);
        let mem = self.encode(&mut g, item)?;
        let x = pool_memory(&mut g, &mem)?;
        let z = vtai_logits(&mut g, x, &self.handles.vtai)?;
        let pr = g.sigmoid(z);
        Ok(g.value(pr).data().iter().map(|v| v.f64()).collect())
    }

    /// Inference-time conditioning: distributions always come from the
    /// model's own heads.
    pub fn context(&self, item: &PreparedItem<T>) -> Result<VideoContext<T>> {
        let h = &self.handles;
        let mut g = Graph::with_params(&self.store, false);
        let mem = self.encode(&mut g, item)?;
        let x = pool_memory(&mut g, &mem)?;
        let logits = vtai_logits(&mut g, x, &h.vtai)?;
        let pr = g.sigmoid(logits);
        let fl = field_logits(&mut g, x, &h.field_head)?;
        let rho_fct = g.softmax_rows(fl, false)?;
        let rho_em = predict_rho_em(&mut g, logits, &self.groups)?;
        let (l_fct, l_em) = self.holistic(&mut g, rho_fct, rho_em)?;
        let k = self.config.effective_k_top(self.attrs.len());
        let (a_emb, rows) = attribute_embed(&mut g, pr, h.aeb_table.into(), k)?;
        let kv = g.concat_rows(&[mem.matrix, a_emb], self.config.model.d_h)?;
        let f64s = |v: Var, g: &Graph<T>| g.value(v).data().iter().map(|x| x.f64()).collect::<Vec<_>>();
        Ok(VideoContext {
            kv: g.value(kv).clone(),
            memory_rows: mem.rows(),
            l_fct: l_fct.map(|v| g.value(v).clone()),
            l_em: l_em.map(|v| g.value(v).clone()),
            pr: f64s(pr, &g),
            rho_em: f64s(rho_em, &g),
            rho_fct: f64s(rho_fct, &g),
            attribute_rows: rows,
        })
    }

    pub fn scorer<'a>(&'a self, ctx: &'a VideoContext<T>) -> ContextScorer<'a, T> {
        ContextScorer { model: self, ctx }
    }

    pub fn beam_config(&self) -> BeamConfig {
        BeamConfig {
            beam: self.config.decode.beam,
            l_max: self.config.model.l_max,
            bos: BOS,
            eos: EOS,
            length_normalize: self.config.decode.length_normalize,
        }
    }

    /// Beam-searched token ids, `bos … eos`.
    pub fn generate(&self, ctx: &VideoContext<T>) -> Result<Hypothesis> {
        beam_search(&self.scorer(ctx), &self.beam_config())
    }

    /// Generated caption as words, without bos/eos.
    pub fn caption(&self, item: &PreparedItem<T>) -> Result<Vec<String>> {
        let ctx = self.context(item)?;
        Ok(self.vocab.decode(&self.generate(&ctx)?.tokens))
    }

    /// Cross-attention mass per key/value row, summed over layers, heads and
    /// every decoding position of `tokens`.
    pub fn attention_mass(&self, ctx: &VideoContext<T>, tokens: &[usize]) -> Result<Vec<f64>> {
        let n = tokens.len().saturating_sub(1).max(1);
        let mut g = Graph::with_params(&self.store, false);
        let kv = g.constant(ctx.kv.clone());
        let lf = ctx.l_fct.clone().map(|t| g.constant(t));
        let le = ctx.l_em.clone().map(|t| g.constant(t));
        let out = decoder_forward(&mut g, &tokens[..n], kv, lf, le, &self.handles.decoder)?;
        let mut mass = vec![0.0; ctx.kv.rows()];
        for layer in &out.cross_attention {
            for &head in layer {
                let a = g.value(head);
                for i in 0..a.rows() {
                    for (m, &p) in mass.iter_mut().zip(a.row_slice(i)) {
                        *m += p.f64();
                    }
                }
            }
        }
        Ok(mass)
    }
}

/// Retrieved caption tokens for `item` from `pool`; empty when the item has
/// no pooled embedding or the pool is absent.
pub fn retrieved_text(
    item: &CorpusItem,
    pool: Option<&EmbeddingStore>,
    n_t: usize,
    exclude_self: bool,
) -> Result<Vec<Vec<String>>> {
    let (Some(pool), Some(q)) = (pool, item.video_embedding.as_deref()) else {
        return Ok(Vec::new());
    };
    let exclude = exclude_self.then_some(item.video_id.as_str());
    Ok(pool.retrieve(q, n_t, exclude)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::attributes::{Attribute, AttributeKind};
    use crate::io::spft::{write_tensor, Modality};
    use std::path::Path;

    pub(crate) fn tiny(dir: &Path) -> (SpectrumModel<f64>, PreparedItem<f64>) {
        let mut cfg = Config::default();
        cfg.model = crate::config::ModelConfig {
            d_h: 8,
            d_b: 4,
            d_e: 4,
            n_layers: 1,
            heads: 1,
            l_max: 10,
            top_k_factual: 4,
        };
        cfg.k_top = 3;
        let lex = EmotionLexicon::default();
        let happy = lex.category_of("happily").unwrap();
        let words = ["happily", "dog", "runs", "park"];
        let caps: Vec<Vec<String>> = vec![
            vec!["a".into(), "dog".into(), "runs".into(), "happily".into()],
            vec!["the".into(), "dog".into(), "park".into()],
        ];
        let vocab = Vocabulary::build(caps.iter().map(Vec::as_slice));
        let attrs = AttributeVocabulary::new(
            words
                .iter()
                .map(|w| Attribute {
                    word: w.to_string(),
                    kind: if *w == "happily" {
                        AttributeKind::Emotional { category: happy }
                    } else {
                        AttributeKind::Factual
                    },
                })
                .collect(),
        );
        let mut rng = Pcg64::seed_from_u64(3);
        let mut paths = Vec::new();
        for (k, n) in [(0, 3), (1, 2), (2, 2)] {
            let p = dir.join(format!("f{k}.spft"));
            write_tensor(&p, Modality::Appearance, &normal(&mut rng, n, 4, 1.0)).unwrap();
            paths.push(p);
        }
        let item = CorpusItem {
            video_id: "v".into(),
            appearance: paths[0].clone(),
            motion: paths[1].clone(),
            audio: paths[2].clone(),
            captions: caps.clone(),
            field: 2,
            caption_embeddings: None,
            video_embedding: None,
        };
        let m = SpectrumModel::<f64>::new(cfg, vocab, attrs, lex, FieldTaxonomy::default()).unwrap();
        let p = m.prepare(&item, &[caps[1].clone()]).unwrap();
        (m, p)
    }

    #[test]
    fn loss_terms_add_up() {
        let dir = tempfile::tempdir().unwrap();
        let (m, p) = tiny(dir.path());
        let t = m.loss_terms(&p, 0).unwrap();
        assert!((t.total - (t.m2s + t.cap)).abs() < 1e-12);
        assert!(t.total > t.m2s && t.total > t.cap);
        assert!((t.objective - (t.total + 0.1 * t.fld)).abs() < 1e-12);
    }

    #[test]
    fn ground_truth_mode_keeps_field_head_out_of_the_main_loss() {
        let dir = tempfile::tempdir().unwrap();
        let (m, p) = tiny(dir.path());
        let (_, grads) = m.gradients(&p, 0).unwrap();
        let h = m.handles();
        // field head gets only the auxiliary gradient; encoders get gradient
        assert!(grads[h.field_head.w.index()].is_some());
        assert!(grads[h.encoders[0].proj.index()].is_some());
        assert!(grads[h.cfb.fld.index()].is_some());
    }

    #[test]
    fn generation_is_deterministic_and_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let (m, p) = tiny(dir.path());
        let a = m.caption(&p).unwrap();
        let b = m.caption(&p).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= m.config.model.l_max - 2);
        let ctx = m.context(&p).unwrap();
        assert_eq!(ctx.attribute_rows.len(), 3);
        assert!((ctx.rho_em.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let h = m.generate(&ctx).unwrap();
        let mass = m.attention_mass(&ctx, &h.tokens).unwrap();
        let steps = (h.tokens.len() - 1) as f64;
        assert!((mass.iter().sum::<f64>() - steps).abs() < 1e-9);
    }

    #[test]
    fn wrong_feature_width_fails_fast() {
        let dir = tempfile::tempdir().unwrap();
        let (mut m, _) = tiny(dir.path());
        m.config.model.d_b = 5;
        let item = CorpusItem {
            video_id: "v".into(),
            appearance: dir.path().join("f0.spft"),
            motion: dir.path().join("f1.spft"),
            audio: dir.path().join("f2.spft"),
            captions: vec![vec!["dog".into()]],
            field: 0,
            caption_embeddings: None,
            video_embedding: None,
        };
        assert!(m.prepare(&item, &[]).is_err());
    }
}
