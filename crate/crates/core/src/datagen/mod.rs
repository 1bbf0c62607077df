//! Synthetic dataset generation, CSV ingestion, and client partitioning.
//!
//! Datasets are desk-scale Gaussian mixtures: class means sit on a circle of
//! fixed radius in the first two input dimensions, so classes are linearly
//! separable as the spread goes to zero and get progressively harder as it
//! grows. Partitioning supports IID splits, quantity-based label skew Qua(q)
//! (each client sees exactly q classes), and distribution-based skew Dir(μ)
//! (per-client class proportions drawn from a symmetric Dirichlet), all at a
//! controllable per-client sample budget (the scarcity knob).

mod csvio;
mod partition;

pub use csvio::{load_csv, save_csv};
pub use partition::{partition, PartitionManifest};

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{one_hot, Batch};
use crate::rng::{derive_rng, tag};

/// Radius of the circle the class means are placed on.
const MEAN_RADIUS: f64 = 2.0;

/// A labelled dataset: inputs are (n × dims), labels are dense class ids in
/// [0, C). `context_flags` marks rows carrying the privacy-probe marker.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub context_flags: Option<Vec<bool>>,
}

impl Dataset {
    pub fn new(
        inputs: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        context_flags: Option<Vec<bool>>,
    ) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::shape("Dataset rows", inputs.nrows(), labels.len()));
        }
        if let Some(flags) = &context_flags {
            if flags.len() != labels.len() {
                return Err(Error::shape("Dataset flags", labels.len(), flags.len()));
            }
        }
        let mut counts = vec![0usize; num_classes];
        for &l in &labels {
            if l >= num_classes {
                return Err(Error::Config(format!(
                    "label {l} out of range for C={num_classes}"
                )));
            }
            counts[l] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Config(format!(
                "class {empty} has no samples in the global set"
            )));
        }
        Ok(Dataset { inputs, labels, num_classes, context_flags })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Sample indices grouped by class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    /// Materialize the given rows as a training batch with one-hot labels.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let classes: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        Batch {
            inputs: self.inputs.select(ndarray::Axis(0), indices),
            labels: one_hot(&classes, self.num_classes),
        }
    }

    /// The whole dataset as one batch.
    pub fn full_batch(&self) -> Batch {
        let indices: Vec<usize> = (0..self.len()).collect();
        self.batch(&indices)
    }
}

/// One client's slice of a parent [`Dataset`], held as indices (no copying).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client_id: usize,
    pub indices: Vec<usize>,
}

impl ClientDataset {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Label-skew mode for partitioning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    /// Equal-size stratified samples (±1 per class within each client).
    Iid,
    /// Quantity-based skew: each client holds exactly q classes.
    Qua(usize),
    /// Distribution-based skew: per-client class proportions ~ Dirichlet(μ).
    Dir(f64),
}

/// How to split a dataset across clients: skew mode, client count, and the
/// per-client sample budget |D̄_k| (the scarcity knob).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    pub num_clients: usize,
    pub mean_size: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Partition("num_clients must be ≥ 1".into()));
        }
        if self.mean_size == 0 {
            return Err(Error::Partition("mean_size must be ≥ 1".into()));
        }
        if self.num_clients * self.mean_size > dataset.len() {
            return Err(Error::Partition(format!(
                "budget {}×{} exceeds dataset size {}",
                self.num_clients,
                self.mean_size,
                dataset.len()
            )));
        }
        match self.mode {
            PartitionMode::Iid => Ok(()),
            PartitionMode::Qua(q) => {
                if q < 1 || q > dataset.num_classes {
                    Err(Error::Partition(format!(
                        "Qua(q): q={q} outside [1, {}]",
                        dataset.num_classes
                    )))
                } else {
                    Ok(())
                }
            }
            PartitionMode::Dir(mu) => {
                if mu > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Partition(format!("Dir(μ): μ={mu} must be > 0")))
                }
            }
        }
    }
}

/// Generate `C` isotropic Gaussian clusters of `per_class` samples each,
/// linearly separable as `spread → 0`. Class means sit evenly spaced on a
/// circle of radius 2 in the first two coordinates; all remaining dimensions
/// are pure noise, so lower `spread` means easier classes. Rows are
/// class-major: class 0 first, then class 1, and so on.
pub fn gen_gaussian_mixture(
    num_classes: usize,
    dims: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::Config(format!("need C ≥ 2, got {num_classes}")));
    }
    if dims < 2 {
        return Err(Error::Config(format!("need dims ≥ 2, got {dims}")));
    }
    if per_class < 1 {
        return Err(Error::Config("need per_class ≥ 1".into()));
    }
    if !(spread >= 0.0) {
        return Err(Error::Config(format!("spread must be ≥ 0, got {spread}")));
    }
    let mut rng = derive_rng(seed, &[tag::DATASET]);
    let n = num_classes * per_class;
    let mut inputs = Array2::zeros((n, dims));
    let mut labels = Vec::with_capacity(n);
    for class in 0..num_classes {
        let angle = 2.0 * std::f64::consts::PI * class as f64 / num_classes as f64;
        let circle = [MEAN_RADIUS * angle.cos(), MEAN_RADIUS * angle.sin()];
        for row in 0..per_class {
            let i = class * per_class + row;
            for j in 0..dims {
                let noise: f64 = StandardNormal.sample(&mut rng);
                let center = if j < 2 { circle[j] } else { 0.0 };
                inputs[[i, j]] = center + spread * noise;
            }
            labels.push(class);
        }
    }
    Dataset::new(inputs, labels, num_classes, None)
}

/// Add a marker pattern (the probe's "context") onto the first
/// `marker.len()` input coordinates of a seeded `fraction` of rows, chosen
/// without replacement; sets `context_flags` accordingly. The flagged count
/// is `round(fraction · n)`.
pub fn add_context_marker(
    dataset: &Dataset,
    marker: &[f64],
    fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    if marker.len() > dataset.dims() {
        return Err(Error::Config(format!(
            "marker length {} exceeds input dims {}",
            marker.len(),
            dataset.dims()
        )));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "marker fraction must be in (0, 1], got {fraction}"
        )));
    }
    let n = dataset.len();
    let count = ((fraction * n as f64).round() as usize).min(n);
    let mut rng = derive_rng(seed, &[tag::MARKER]);
    let chosen = rand::seq::index::sample(&mut rng, n, count);
    let mut inputs = dataset.inputs.clone();
    let mut flags = vec![false; n];
    for i in chosen {
        flags[i] = true;
        for (j, &m) in marker.iter().enumerate() {
            inputs[[i, j]] += m;
        }
    }
    Dataset::new(inputs, dataset.labels.clone(), dataset.num_classes, Some(flags))
}
