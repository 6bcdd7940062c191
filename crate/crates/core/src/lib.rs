//! Cross-device EEG emotion recognition with contrastively aligned encoders.
//!
//! The crate covers the full pipeline: paired wet/dry dataset handling (with
//! a synthetic generator for verification), signal preprocessing, per-band
//! differential-entropy features, a small f64 dense-network engine, the
//! partially weight-shared alignment model, and cross-validation protocols
//! with metrics and significance tests.
//!
//! Data-parallel stages (generation, preprocessing, featurization, fold
//! execution) run on rayon with the default `parallel` feature and fall back
//! to sequential loops without it; `*_seq` variants stay available for
//! benchmarking either way. Results are independent of the schedule.

pub mod data;
pub mod decan;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
pub mod network;
pub mod par;
pub mod pipeline;

pub use error::{Error, Result};
