//! C ABI over the `spectrum` library.
//!
//! Every fallible function returns a [`SpectrumStatus`]; on failure the
//! message is available from [`spectrum_last_error`] on the same thread.
//! Strings handed out by the library must be released with
//! [`spectrum_string_free`], handles with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use spectrum::checkpoint;
use spectrum::io::lexicon::EmotionLexicon;
use spectrum::io::manifest::CorpusItem;
use spectrum::io::spft::{load_feature_tensor, FeatureSequence, Modality};
use spectrum::io::text::tokenize;
use spectrum::metrics::evaluate;
use spectrum::model::retrieved_text;
use spectrum::retrieval::EmbeddingStore;
use spectrum::tensor::Tensor;
use spectrum::Error;

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Checkpoint = 6,
    InvalidArgument = 7,
    Panic = 8,
}

/// A loaded checkpoint.
pub struct SpectrumModel {
    model: spectrum::SpectrumModel<f32>,
    pool: Option<EmbeddingStore>,
}

/// One `tokens × width` feature matrix.
pub struct SpectrumFeature {
    inner: FeatureSequence,
}

/// Corpus-level scores; fractions except `cider` (×100) and `sum`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpectrumReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub sum: f64,
    pub acc_sw: f64,
    pub acc_c: f64,
    pub bfs: f64,
    pub cfs: f64,
    pub items: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SpectrumStatus {
    match e {
        Error::Io { .. } => SpectrumStatus::Io,
        Error::Magic { .. }
        | Error::Truncated { .. }
        | Error::DimensionOverflow { .. }
        | Error::Version(_)
        | Error::Json(_)
        | Error::MissingKey { .. }
        | Error::Manifest { .. } => SpectrumStatus::Format,
        Error::Shape { .. } | Error::Index { .. } => SpectrumStatus::Shape,
        Error::Checkpoint(_) => SpectrumStatus::Checkpoint,
        _ => SpectrumStatus::InvalidArgument,
    }
}

struct Fail(SpectrumStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SpectrumStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpectrumStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            SpectrumStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(SpectrumStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SpectrumStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn null(what: &str) -> Fail {
    Fail(SpectrumStatus::NullPointer, format!("{what} is null"))
}

fn into_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(SpectrumStatus::InvalidArgument, "string contains NUL".into()))
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next library call on the same thread.
#[no_mangle]
pub extern "C" fn spectrum_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spectrum_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn spectrum_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a checkpoint directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spectrum_model_load(dir: *const c_char, out: *mut *mut SpectrumModel) -> SpectrumStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        let ck = checkpoint::load(&dir, None, false)?;
        *out = Box::into_raw(Box::new(SpectrumModel {
            model: ck.model,
            pool: ck.pool,
        }));
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`spectrum_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn spectrum_model_free(m: *mut SpectrumModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Feature width the model expects.
///
/// # Safety
/// `m` must be a live model handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn spectrum_model_feature_width(m: *const SpectrumModel) -> usize {
    m.as_ref().map_or(0, |m| m.model.config.model.d_b)
}

/// Beam-searches a caption for one video. `video_embedding` (length
/// `embedding_len`) enables caption retrieval and may be NULL. The caption
/// is written to `*out` and must be released with [`spectrum_string_free`].
///
/// # Safety
/// Handles must be live; `video_embedding` must point to `embedding_len`
/// floats when non-NULL; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spectrum_model_caption(
    m: *const SpectrumModel,
    appearance: *const SpectrumFeature,
    motion: *const SpectrumFeature,
    audio: *const SpectrumFeature,
    video_embedding: *const f32,
    embedding_len: usize,
    out: *mut *mut c_char,
) -> SpectrumStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("model"))?;
        let feats = [
            appearance.as_ref().ok_or_else(|| null("appearance"))?,
            motion.as_ref().ok_or_else(|| null("motion"))?,
            audio.as_ref().ok_or_else(|| null("audio"))?,
        ];
        if out.is_null() {
            return Err(null("out"));
        }
        let emb = (!video_embedding.is_null())
            .then(|| std::slice::from_raw_parts(video_embedding, embedding_len).to_vec());
        let item = CorpusItem {
            video_id: String::new(),
            appearance: PathBuf::new(),
            motion: PathBuf::new(),
            audio: PathBuf::new(),
            captions: Vec::new(),
            field: 0,
            caption_embeddings: None,
            video_embedding: emb,
        };
        let r = &m.model.config.retrieval;
        let text = retrieved_text(&item, m.pool.as_ref(), r.n_t, false)?;
        let prepared = m
            .model
            .prepare_loaded(&item, feats.map(|f| f.inner.clone()), &text)?;
        let caption = m.model.caption(&prepared)?.join(" ");
        *out = into_c_string(caption)?;
        Ok(())
    })
}

/// Reads an SPFT feature file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spectrum_feature_load(path: *const c_char, out: *mut *mut SpectrumFeature) -> SpectrumStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = PathBuf::from(str_arg(path, "path")?);
        *out = Box::into_raw(Box::new(SpectrumFeature {
            inner: load_feature_tensor(&p)?,
        }));
        Ok(())
    })
}

/// Copies a row-major `rows × cols` matrix into a feature handle.
///
/// # Safety
/// `data` must point to `rows * cols` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spectrum_feature_from_data(
    data: *const f32,
    rows: usize,
    cols: usize,
    out: *mut *mut SpectrumFeature,
) -> SpectrumStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Fail(SpectrumStatus::Shape, "rows * cols overflows".into()))?;
        let t = Tensor::new(vec![rows, cols], std::slice::from_raw_parts(data, n).to_vec())?;
        *out = Box::into_raw(Box::new(SpectrumFeature {
            inner: FeatureSequence::new(Modality::Untyped, t)?,
        }));
        Ok(())
    })
}

/// # Safety
/// `f` must be a live feature handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn spectrum_feature_rows(f: *const SpectrumFeature) -> usize {
    f.as_ref().map_or(0, |f| f.inner.tokens())
}

/// # Safety
/// `f` must be a live feature handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn spectrum_feature_cols(f: *const SpectrumFeature) -> usize {
    f.as_ref().map_or(0, |f| f.inner.width())
}

/// Row-major values, valid while the handle lives.
///
/// # Safety
/// `f` must be a live feature handle or NULL (returns NULL).
#[no_mangle]
pub unsafe extern "C" fn spectrum_feature_data(f: *const SpectrumFeature) -> *const f32 {
    f.as_ref().map_or(ptr::null(), |f| f.inner.matrix.data().as_ptr())
}

/// # Safety
/// `f` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn spectrum_feature_free(f: *mut SpectrumFeature) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Scores `n` candidate captions against their references with the bundled
/// emotion lexicon. `references[i]` holds the references of item `i`
/// separated by newlines.
///
/// # Safety
/// `candidates` and `references` must each point to `n` NUL-terminated
/// strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spectrum_evaluate(
    candidates: *const *const c_char,
    references: *const *const c_char,
    n: usize,
    gamma: f64,
    out: *mut SpectrumReport,
) -> SpectrumStatus {
    guard(|| {
        if candidates.is_null() || references.is_null() {
            return Err(null("candidates/references"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let mut cands = Vec::with_capacity(n);
        let mut refs = Vec::with_capacity(n);
        for i in 0..n {
            cands.push(tokenize(str_arg(*candidates.add(i), "candidate")?));
            let r: Vec<Vec<String>> = str_arg(*references.add(i), "reference")?
                .lines()
                .map(tokenize)
                .filter(|t| !t.is_empty())
                .collect();
            refs.push(r);
        }
        let r = evaluate(&cands, &refs, &EmotionLexicon::default(), gamma)?;
        *out = SpectrumReport {
            bleu1: r.bleu1,
            bleu2: r.bleu2,
            bleu3: r.bleu3,
            bleu4: r.bleu4,
            meteor: r.meteor,
            rouge_l: r.rouge_l,
            cider: r.cider,
            sum: r.sum,
            acc_sw: r.acc_sw,
            acc_c: r.acc_c,
            bfs: r.bfs,
            cfs: r.cfs,
            items: r.items,
        };
        Ok(())
    })
}
