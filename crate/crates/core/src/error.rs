use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("bad magic in {path}: expected SPFT")]
    Magic { path: PathBuf },

    #[error("truncated tensor file {path}: expected {expected} bytes of payload, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("dimension overflow in {path}: dims {dims:?}")]
    DimensionOverflow { path: PathBuf, dims: Vec<u32> },

    #[error("unsupported SPFT version {0}")]
    Version(u32),

    #[error("manifest line {line}: missing key `{key}`")]
    MissingKey { line: usize, key: String },

    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("attribute set is empty: no emotion words present and top_k_factual = 0")]
    EmptyAttributeSet,

    #[error("all modalities are masked; encoder memory would be empty")]
    EmptyMemory,

    #[error("no retrieval candidates left")]
    EmptyCandidates,

    #[error("unknown video id `{0}`")]
    UnknownVideo(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
