//! Evaluation: test accuracy, Davies-Bouldin feature separation, measured
//! mean distance correlation c̄, feature-exposure accounting, and the
//! CSV/JSONL metrics sink.
//!
//! The exposure matrix ξ tracks which client pairs have (transitively
//! directly) exchanged features: senders of the current buffer × receivers of
//! the current round. ε = Σξ/|K|² with the diagonal excluded — a client
//! trivially "knows" its own features, so self-pairs never count.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::flea::distance_correlation;
use crate::nn::ModelParams;
use crate::rng::{derive_rng, tag};

/// Index of the row maximum, first maximum winning ties (deterministic).
fn argmax_row(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Top-1 accuracy of a logit matrix against integer labels.
pub fn accuracy_from_logits(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    assert_eq!(logits.nrows(), labels.len(), "accuracy rows");
    let correct = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &label)| argmax_row(row.view()) == label)
        .count();
    correct as f64 / labels.len() as f64
}

/// Argmax-logit top-1 accuracy of a model on a dataset.
pub fn accuracy(model: &ModelParams, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Config("accuracy: empty test set".into()));
    }
    let logits = model.forward(&test.inputs)?;
    Ok(accuracy_from_logits(&logits, &test.labels))
}

/// Classical Davies-Bouldin index with ground-truth labels as clusters:
/// within-cluster scatter `s_i` is the mean Euclidean distance of members to
/// their centroid, and `DB = (1/k) Σ_i max_{j≠i} (s_i+s_j)/‖c_i−c_j‖`.
/// Lower is better-separated. Pairs with coincident centroids are excluded
/// from the max (the ratio is undefined there); a cluster with no valid pair
/// drops out of the outer mean.
pub fn db_score(features: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if features.nrows() != labels.len() {
        return Err(Error::shape("db_score rows", features.nrows(), labels.len()));
    }
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Config(format!(
            "db_score needs ≥ 2 clusters, got {}",
            distinct.len()
        )));
    }
    let dims = features.ncols();
    let k = distinct.len();
    let mut centroids = Array2::zeros((k, dims));
    let mut scatters = vec![0.0; k];
    for (ci, &label) in distinct.iter().enumerate() {
        let members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect();
        let block = features.select(Axis(0), &members);
        let centroid = block.mean_axis(Axis(0)).expect("≥ 1 member");
        let scatter = block
            .rows()
            .into_iter()
            .map(|r| (&r - &centroid).mapv(|v| v * v).sum().sqrt())
            .sum::<f64>()
            / members.len() as f64;
        centroids.row_mut(ci).assign(&centroid);
        scatters[ci] = scatter;
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..k {
        let mut worst: Option<f64> = None;
        for j in 0..k {
            if i == j {
                continue;
            }
            let d = (&centroids.row(i) - &centroids.row(j))
                .mapv(|v| v * v)
                .sum()
                .sqrt();
            if d == 0.0 {
                continue; // coincident centroids: ratio undefined, pair skipped
            }
            let r = (scatters[i] + scatters[j]) / d;
            worst = Some(worst.map_or(r, |w: f64| w.max(r)));
        }
        if let Some(w) = worst {
            total += w;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::numerical("db_score", "all centroid pairs coincide"));
    }
    Ok(total / counted as f64)
}

/// Measured mean distance correlation c̄ between inputs and their layer-l
/// activations: seeded fixed-size batches covering the data exactly once
/// (a trailing single row is dropped — one point has no pairwise distances).
pub fn mean_dcor(
    model: &ModelParams,
    data: &Dataset,
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("mean_dcor: empty dataset".into()));
    }
    if batch_size < 2 {
        return Err(Error::Config("mean_dcor: batch_size must be ≥ 2".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut derive_rng(seed, &[tag::METRIC_BATCH]));
    let mut total = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let x = data.inputs.select(Axis(0), chunk);
        let f = model.forward_front(&x)?;
        total += distance_correlation(&x, &f)?;
        batches += 1;
    }
    if batches == 0 {
        return Err(Error::Config("mean_dcor: no batch of ≥ 2 rows".into()));
    }
    Ok(total / batches as f64)
}

/// Symmetric boolean client-pair exchange matrix ξ; entries only ever go
/// 0 → 1 and the diagonal stays 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExposureMatrix {
    flags: Vec<bool>,
    num_clients: usize,
}

impl ExposureMatrix {
    pub fn new(num_clients: usize) -> Self {
        ExposureMatrix { flags: vec![false; num_clients * num_clients], num_clients }
    }

    /// Rebuild from a stored flat flag vector (checkpoint restore).
    pub fn from_flags(num_clients: usize, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != num_clients * num_clients {
            return Err(Error::shape(
                "exposure flags",
                num_clients * num_clients,
                flags.len(),
            ));
        }
        Ok(ExposureMatrix { flags, num_clients })
    }

    pub fn num_clients(&self) -> usize {
        self.num_clients
    }

    /// Row-major flat view of ξ (for checkpointing).
    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.flags[i * self.num_clients + j]
    }

    /// Mark every sender↔receiver pair as exposed (both directions,
    /// self-pairs excluded). Monotone and idempotent.
    pub fn update(&mut self, senders: &[usize], receivers: &[usize]) -> Result<()> {
        for &id in senders.iter().chain(receivers) {
            if id >= self.num_clients {
                return Err(Error::Config(format!(
                    "exposure update: client {id} out of range (|K|={})",
                    self.num_clients
                )));
            }
        }
        for &i in senders {
            for &j in receivers {
                if i != j {
                    self.flags[i * self.num_clients + j] = true;
                    self.flags[j * self.num_clients + i] = true;
                }
            }
        }
        Ok(())
    }

    /// ε = Σ ξ_ij / |K|²; the diagonal is structurally zero, so the maximum
    /// is (|K|²−|K|)/|K|².
    pub fn eps(&self) -> f64 {
        let ones = self.flags.iter().filter(|&&f| f).count();
        ones as f64 / (self.num_clients * self.num_clients) as f64
    }
}

/// One evaluation row, emitted once per round per (strategy, seed) run.
/// Field order is the stable CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round: usize,
    pub strategy: String,
    pub seed: u64,
    pub accuracy: f64,
    pub best_accuracy: f64,
    pub loss_clf: f64,
    pub loss_dis: f64,
    pub loss_dec: f64,
    pub db_train: f64,
    pub db_test: f64,
    pub mean_dcor: f64,
    pub exposure_eps: f64,
    pub wallclock_ms: u64,
}

impl MetricsRecord {
    pub fn validate(&self) -> Result<()> {
        if self.round < 1 {
            return Err(Error::Config("metrics record: rounds are 1-based".into()));
        }
        let values = [
            ("accuracy", self.accuracy),
            ("best_accuracy", self.best_accuracy),
            ("loss_clf", self.loss_clf),
            ("loss_dis", self.loss_dis),
            ("loss_dec", self.loss_dec),
            ("db_train", self.db_train),
            ("db_test", self.db_test),
            ("mean_dcor", self.mean_dcor),
            ("exposure_eps", self.exposure_eps),
        ];
        for (name, v) in values {
            if !v.is_finite() {
                return Err(Error::numerical("metrics record", format!("{name} = {v}")));
            }
        }
        Ok(())
    }
}

/// Append-only metrics writer: one CSV row and one JSONL object per record,
/// flushed on every write so partial runs stay inspectable.
pub struct MetricsSink {
    csv: csv::Writer<std::fs::File>,
    jsonl: std::io::BufWriter<std::fs::File>,
}

impl MetricsSink {
    pub fn create(csv_path: &Path, jsonl_path: &Path) -> Result<Self> {
        let csv = csv::WriterBuilder::new()
            .has_headers(true)
            .from_path(csv_path)?;
        let jsonl = std::io::BufWriter::new(std::fs::File::create(jsonl_path)?);
        Ok(MetricsSink { csv, jsonl })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        record.validate()?;
        self.csv.serialize(record)?;
        self.csv.flush()?;
        serde_json::to_writer(&mut self.jsonl, record)?;
        self.jsonl.write_all(b"\n")?;
        self.jsonl.flush()?;
        Ok(())
    }
}

/// Read back a JSONL metrics file written by [`MetricsSink`].
pub fn load_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let content = std::fs::read_to_string(path)?;
    content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
