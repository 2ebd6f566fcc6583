//! Measurement harness for language preference in multilingual
//! retrieval-augmented generation.
//!
//! The crate builds contrastive evidence contexts in which only the cited
//! document changes language, probes a model's next-token citation
//! prediction for each, and aggregates accuracy, gap, entropy, position,
//! layer-wise and ablation-attribution statistics.
//!
//! Modules follow the measurement pipeline:
//!
//! * [`corpus`]: datasets, translations, reference reports, segmentation.
//! * [`filtergate`]: judge majority vote and entailment gating.
//! * [`contextlab`]: contrastive contexts and probe prompts.
//! * [`probe`]: the model backend contract and probing operations.
//! * [`metrics`]: accuracy, significance, power, layer classes, attribution.
//! * [`runner`]: configuration, experiment orchestration and outputs.

pub mod adapters;
pub mod contextlab;
pub mod corpus;
pub mod error;
pub mod filtergate;
pub mod metrics;
pub mod probe;
pub mod runner;

pub use error::{Error, Result};
