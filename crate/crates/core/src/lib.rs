//! Hybrid human-AI social bot detection toolkit.
//!
//! The crate is split along the pipeline:
//!
//! - [`data`]: accounts, interaction events, reports, dataset IO, fold splits and run artifacts
//! - [`metrics`]: confusion-based scores, agreement, report-frequency conditionals, temporal evaluation
//! - [`stats`]: permutation tests, Benjamini-Hochberg, OLS, chi-square and McNemar
//! - [`detectors`]: feature extraction, bagged trees, a logistic mixture of experts, external scores
//! - [`aggregation`]: human report aggregation, model-only and hybrid ensembles, cross-validated comparison
//! - [`retraining`]: day-by-day incremental retraining under three supervision regimes
//! - [`simulator`]: an agent-based platform with adaptive bot campaigns and simulated reporters
//!
//! All randomness is derived from a single `u64` seed through [`rng`].

pub mod aggregation;
pub mod data;
pub mod detectors;
pub mod error;
pub mod metrics;
pub mod retraining;
pub mod rng;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};

/// Version string written into every run manifest.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
