//! Emotion-informed video captioning.
//!
//! Pre-extracted modality features are projected into a shared width,
//! augmented with retrieved captions, investigated for attribute concepts,
//! themed by holistic emotion/field vectors and decoded by a Pre-LN
//! transformer. Everything trains on the crate's own reverse-mode autodiff.

pub mod autodiff;
pub mod checkpoint;
pub mod concept;
pub mod config;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod retrieval;
pub mod tensor;
pub mod train;

pub use config::Config;
pub use error::{Error, Result};
pub use model::SpectrumModel;
