//! Deterministic federated-learning simulator with a pluggable unlearning
//! layer and the evaluation metrics needed to compare unlearning methods.
//!
//! The crate is organized around five pieces:
//!
//! - [`models`]: flat-parameter softmax classifiers with manual backprop
//! - [`data`] / [`idx`]: dataset generation, IDX ingestion, partitioning,
//!   backdoor/watermark injection, forget-set resolution
//! - [`fedsim`]: the FedAvg engine with per-round history recording
//! - [`unlearn`]: retrain, fine-tune, continue-to-train, historical replay,
//!   and projected gradient ascent
//! - [`metrics`]: alignment, marking, and efficiency metrics
//!
//! Every randomized operation takes an explicit seed and is bit-reproducible,
//! including across thread counts (feature `parallel`).

pub mod data;
pub mod error;
pub mod fedsim;
pub mod history_io;
pub mod idx;
pub mod metrics;
pub mod models;
pub mod params_io;
pub mod rng;
pub mod unlearn;

pub use error::{Error, Result};
