//! Crate-wide error type.
//!
//! Library code returns `Result<T>` for contract violations the caller can act
//! on (shape mismatches, infeasible partitions, bad configs, I/O). Internal
//! logic bugs (e.g. an index we just computed being out of range) still panic.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix/vector dimensions don't line up for the requested operation.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    /// A computation produced (or received) non-finite values.
    #[error("numerical error in {context}: {detail}")]
    Numerical { context: String, detail: String },

    /// A partition spec cannot be satisfied by the dataset.
    #[error("partition error: {0}")]
    Partition(String),

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Model shapes disagree during aggregation; names the offending client index.
    #[error("aggregation error at client index {client}: {detail}")]
    Aggregation { client: usize, detail: String },

    /// Malformed input data (CSV rows, manifests); carries a 1-based line number.
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    /// Privacy-probe specific failures (degenerate subsets, insufficient pairs).
    #[error("probe error: {0}")]
    Probe(String),

    /// Checkpoint directory missing or inconsistent with its manifest.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Convenience constructor for shape errors.
    pub fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Convenience constructor for numerical errors.
    pub fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
