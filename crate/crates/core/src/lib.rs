//! Label-noise-robust tabular classification toolkit.
//!
//! The pipeline: density-peak clustering discovers cluster centers, fuzzy
//! gating routes samples to per-cluster subnetworks, and subnetworks are
//! trained either with classic squared-error backpropagation or with a
//! dynamically truncated generalized cross-entropy loss that prunes the
//! gradients of suspected mislabeled samples. A seeded experiment harness
//! injects label noise at controlled rates and reports the resulting
//! clean-test metrics.

pub mod clustering;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gating;
pub mod metrics;
pub mod network;
pub mod robust;
pub mod seed;

pub use error::{Error, Result};
