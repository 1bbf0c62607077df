//! Server-side round engine: client sampling, size-weighted model
//! aggregation, feature extraction and buffer merging for FLea, shared-pool
//! preparation for the FedMix/FedData baselines, and the per-round driver.
//!
//! The feature buffer is round-scoped: the buffer serving round t+1 is built
//! from scratch out of the round-t cohort's extractions and fully replaces
//! its predecessor. Baseline pools are the opposite — gathered once up front
//! and immutable afterwards.

mod baseline;
mod round;

pub use baseline::baseline_local_train;
pub use round::{run_round, RoundContext, RoundState, RunSettings};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::datagen::{ClientDataset, Dataset};
use crate::error::{Error, Result};
use crate::flea::FeatureRecord;
use crate::nn::{one_hot, Gradients, ModelParams};
use crate::rng::{derive_rng, tag};

/// Which federated strategy a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Flea,
    FedAvg,
    FedProx,
    FedMix,
    FedData,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Flea => "flea",
            Strategy::FedAvg => "fedavg",
            Strategy::FedProx => "fedprox",
            Strategy::FedMix => "fedmix",
            Strategy::FedData => "feddata",
        }
    }

    /// Does this strategy need a [`SharedPool`] before round 1?
    pub fn pool_kind(self) -> Option<PoolKind> {
        match self {
            Strategy::FedMix => Some(PoolKind::BatchAverages),
            Strategy::FedData => Some(PoolKind::RawData),
            _ => None,
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flea" => Ok(Strategy::Flea),
            "fedavg" => Ok(Strategy::FedAvg),
            "fedprox" => Ok(Strategy::FedProx),
            "fedmix" => Ok(Strategy::FedMix),
            "feddata" => Ok(Strategy::FedData),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (expected flea|fedavg|fedprox|fedmix|feddata)"
            ))),
        }
    }
}

/// The round-scoped global feature buffer F^(t): every record is a layer-l
/// activation with its soft label and origin. `round` is the round this
/// buffer serves (i.e. it was merged at the end of round−1).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBuffer {
    pub round: usize,
    pub records: Vec<FeatureRecord>,
    /// Sorted distinct ids of the clients whose extractions built this buffer.
    pub contributors: Vec<usize>,
}

impl FeatureBuffer {
    /// The empty pre-round-1 buffer.
    pub fn empty() -> Self {
        FeatureBuffer { round: 1, records: Vec::new(), contributors: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// What a baseline pool holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    /// FedData: raw input rows with hard (one-hot) labels.
    RawData,
    /// FedMix: per-group mean inputs with mean one-hot labels.
    BatchAverages,
}

/// Globally shared samples for FedMix/FedData, gathered once before round 1
/// and immutable afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedPool {
    pub kind: PoolKind,
    pub samples: Array2<f64>,
    pub labels: Array2<f64>,
    /// Every client that contributed (used for exposure accounting).
    pub contributors: Vec<usize>,
}

impl SharedPool {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }
}

/// Sample the round-t cohort: ⌈fraction·|K|⌉ distinct client ids in
/// ascending order, seeded by (seed, t).
pub fn sample_clients(
    num_clients: usize,
    fraction: f64,
    round: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "client fraction must be in (0, 1], got {fraction}"
        )));
    }
    if num_clients == 0 {
        return Err(Error::Config("sample_clients: no clients".into()));
    }
    // The 1e-9 slack keeps exact products like 0.1·500 from rounding up to 51
    // when fp noise lands at 50.000000000001.
    let count = ((fraction * num_clients as f64 - 1e-9).ceil() as usize)
        .clamp(1, num_clients);
    let mut rng = derive_rng(seed, &[tag::CLIENT_SAMPLE, round as u64]);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, num_clients, count).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Size-weighted parameter average (the FedAvg aggregation rule):
/// θ = Σ_k (|D_k|/Σ_j |D_j|)·θ_k, coordinatewise over every layer.
pub fn aggregate_fedavg(models: &[ModelParams], sizes: &[usize]) -> Result<ModelParams> {
    if models.is_empty() {
        return Err(Error::Config("aggregate: no models".into()));
    }
    if models.len() != sizes.len() {
        return Err(Error::shape("aggregate sizes", models.len(), sizes.len()));
    }
    let reference = &models[0];
    for (k, m) in models.iter().enumerate() {
        let compatible = m.num_layers() == reference.num_layers()
            && m.split_index() == reference.split_index()
            && m.layers.iter().zip(&reference.layers).all(|(a, b)| {
                a.weights.dim() == b.weights.dim() && a.activation == b.activation
            });
        if !compatible {
            return Err(Error::Aggregation {
                client: k,
                detail: "model shape differs from cohort reference".into(),
            });
        }
        if sizes[k] == 0 {
            return Err(Error::Aggregation { client: k, detail: "client size 0".into() });
        }
    }
    let total: f64 = sizes.iter().map(|&s| s as f64).sum();
    let mut out = reference.clone();
    for layer in &mut out.layers {
        layer.weights.fill(0.0);
        layer.bias.fill(0.0);
    }
    for (m, &size) in models.iter().zip(sizes) {
        let w = size as f64 / total;
        for (acc, layer) in out.layers.iter_mut().zip(&m.layers) {
            acc.weights.scaled_add(w, &layer.weights);
            acc.bias.scaled_add(w, &layer.bias);
        }
    }
    if !out.is_finite() {
        return Err(Error::numerical("aggregate_fedavg", "non-finite aggregate"));
    }
    Ok(out)
}

/// Hold client weight deltas θ − θ_anchor as a gradient-shaped container
/// (used by the FedProx proximal term).
pub(crate) fn param_delta(model: &ModelParams, anchor: &ModelParams) -> Gradients {
    Gradients {
        weights: model
            .layers
            .iter()
            .zip(&anchor.layers)
            .map(|(m, a)| &m.weights - &a.weights)
            .collect(),
        biases: model
            .layers
            .iter()
            .zip(&anchor.layers)
            .map(|(m, a)| &m.bias - &a.bias)
            .collect(),
    }
}

/// Extract the client's feature contribution for the next round's buffer:
/// a seeded sample of max(1, round(α·|D_k|)) local rows pushed through the
/// *new* global model's front half, stored with one-hot labels.
pub fn extract_features(
    model: &ModelParams,
    dataset: &Dataset,
    client: &ClientDataset,
    alpha: f64,
    run_seed: u64,
    round: usize,
) -> Result<Vec<FeatureRecord>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!(
            "extraction fraction α must be in (0, 1], got {alpha}"
        )));
    }
    if client.is_empty() {
        return Err(Error::Config(format!("client {} has no data", client.client_id)));
    }
    let count = ((alpha * client.len() as f64).round() as usize).clamp(1, client.len());
    let mut rng = derive_rng(
        run_seed,
        &[tag::EXTRACT, round as u64, client.client_id as u64],
    );
    let picked = rand::seq::index::sample(&mut rng, client.len(), count);
    let rows: Vec<usize> = picked.iter().map(|i| client.indices[i]).collect();
    let inputs = dataset.inputs.select(Axis(0), &rows);
    let activations = model.forward_front(&inputs)?;
    rows.iter()
        .enumerate()
        .map(|(i, &row)| {
            let label = one_hot(&[dataset.labels[row]], dataset.num_classes)
                .row(0)
                .to_owned();
            FeatureRecord::new(activations.row(i).to_owned(), label, client.client_id)
        })
        .collect()
}

/// Concatenate per-client extractions into the buffer serving `next_round`,
/// in a seeded shuffled order; the previous buffer is simply dropped by the
/// caller (round-scoped replacement).
pub fn merge_buffers(
    locals: Vec<Vec<FeatureRecord>>,
    next_round: usize,
    run_seed: u64,
) -> Result<FeatureBuffer> {
    let mut records: Vec<FeatureRecord> = locals.into_iter().flatten().collect();
    if let Some(first) = records.first() {
        let width = first.width();
        let classes = first.soft_label.len();
        for rec in &records {
            if rec.width() != width || rec.soft_label.len() != classes {
                return Err(Error::shape(
                    "merge_buffers record",
                    format!("({width}, {classes})"),
                    format!("({}, {})", rec.width(), rec.soft_label.len()),
                ));
            }
        }
    }
    use rand::seq::SliceRandom;
    records.shuffle(&mut derive_rng(run_seed, &[tag::MERGE_SHUFFLE, next_round as u64]));
    let mut contributors: Vec<usize> = records.iter().map(|r| r.origin_client).collect();
    contributors.sort_unstable();
    contributors.dedup();
    Ok(FeatureBuffer { round: next_round, records, contributors })
}

/// Gather the baseline sharing pool once, before round 1.
///
/// - `RawData` (FedData): a seeded 10% sample of every client's rows
///   (at least one), with hard one-hot labels.
/// - `BatchAverages` (FedMix): every client's rows in seeded order, chunked
///   into groups of 5, each group replaced by its mean input and mean
///   one-hot label; a client with fewer than 5 rows contributes one group
///   of everything it has.
pub fn prepare_shared_pool(
    dataset: &Dataset,
    clients: &[ClientDataset],
    kind: PoolKind,
    run_seed: u64,
) -> Result<SharedPool> {
    if clients.is_empty() {
        return Err(Error::Config("shared pool: no clients".into()));
    }
    const RAW_FRACTION: f64 = 0.1;
    const GROUP: usize = 5;
    let dims = dataset.dims();
    let classes = dataset.num_classes;
    let mut samples: Vec<f64> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for client in clients {
        if client.is_empty() {
            return Err(Error::Config(format!("client {} has no data", client.client_id)));
        }
        let mut rng = derive_rng(run_seed, &[tag::POOL, client.client_id as u64]);
        match kind {
            PoolKind::RawData => {
                let count = ((RAW_FRACTION * client.len() as f64).round() as usize)
                    .clamp(1, client.len());
                let picked = rand::seq::index::sample(&mut rng, client.len(), count);
                for i in picked {
                    let row = client.indices[i];
                    samples.extend(dataset.inputs.row(row).iter());
                    let mut one = vec![0.0; classes];
                    one[dataset.labels[row]] = 1.0;
                    labels.extend(one);
                    rows += 1;
                }
            }
            PoolKind::BatchAverages => {
                use rand::seq::SliceRandom;
                let mut order: Vec<usize> = client.indices.clone();
                order.shuffle(&mut rng);
                for group in order.chunks(GROUP) {
                    let n = group.len() as f64;
                    let mut mean_x = vec![0.0; dims];
                    let mut mean_y = vec![0.0; classes];
                    for &row in group {
                        for (j, v) in dataset.inputs.row(row).iter().enumerate() {
                            mean_x[j] += v;
                        }
                        mean_y[dataset.labels[row]] += 1.0;
                    }
                    samples.extend(mean_x.iter().map(|v| v / n));
                    labels.extend(mean_y.iter().map(|v| v / n));
                    rows += 1;
                }
            }
        }
    }
    let samples = Array2::from_shape_vec((rows, dims), samples).expect("counted rows");
    let labels = Array2::from_shape_vec((rows, classes), labels).expect("counted rows");
    let contributors = clients.iter().map(|c| c.client_id).collect();
    Ok(SharedPool { kind, samples, labels, contributors })
}
