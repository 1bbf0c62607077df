//! Deterministic single-process simulator of the FLea federated-learning
//! protocol: clients share layer-l feature buffers instead of raw data,
//! augment local batches by Beta-weighted feature mix-up, and train against a
//! composite loss that adds knowledge distillation from the previous global
//! model and a distance-correlation penalty that obfuscates shared features.
//! Baselines (FedAvg, FedProx, FedMix, FedData), label-skew/scarcity
//! partitioning, quality metrics, and privacy-attack probes round out the
//! experiment harness.
//!
//! Everything is seeded: a run is a pure function of its config. Randomness
//! flows through purpose-tagged ChaCha8 streams (see [`rng`]) so that
//! per-client work is independent of scheduling order and strategies can be
//! compared on identical draws.

pub mod config;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod flea;
pub mod metrics;
pub mod nn;
pub mod probe;
pub mod rng;

pub use error::{Error, Result};
