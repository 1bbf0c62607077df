//! One federated round, end to end: sample the cohort, broadcast the global
//! model (and, for FLea, the current feature buffer), train every cohort
//! client locally, aggregate size-weighted, then — FLea only — extract fresh
//! features with the *new* model and merge them into the buffer that will
//! serve the next round. Every round emits one [`MetricsRecord`].
//!
//! Client work is independent by construction (all randomness is keyed by
//! (run seed, round, client id)), so the engine can fan out across threads
//! and still produce bit-identical results to a sequential pass.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::{ClientDataset, Dataset};
use crate::error::{Error, Result};
use crate::flea::{
    flea_local_train, FeatureRecord, LocalTrainCfg, LossTotals, LossWeights, MixupParams,
};
use crate::metrics::{accuracy, db_score, mean_dcor, ExposureMatrix, MetricsRecord};
use crate::nn::{read_f64_le, write_f64_le, AdamConfig, ModelParams};
use crate::rng::{mix, tag};

use super::{
    aggregate_fedavg, baseline_local_train, extract_features, merge_buffers, prepare_shared_pool,
    sample_clients, FeatureBuffer, PoolKind, SharedPool, Strategy,
};

/// Everything a round needs beyond the mutable state: hyper-parameters and
/// run identity. Built once per run.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub strategy: Strategy,
    pub run_seed: u64,
    /// Fraction of clients sampled per round; cohort size is ⌈fraction·|K|⌉.
    pub fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mixup: MixupParams,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    /// Per-client feature extraction fraction α (FLea).
    pub alpha: f64,
    /// Proximal pull strength ρ (FedProx; 0 reduces it to FedAvg).
    pub prox_rho: f64,
    /// Batch size for the mean distance-correlation metric.
    pub metric_batch: usize,
    /// Worker threads for the client fan-out (1 = sequential).
    pub threads: usize,
    /// Record real wallclock per round; off by default so repeated runs
    /// produce byte-identical metrics files.
    pub record_timing: bool,
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!(
                "client fraction must be in (0, 1], got {}",
                self.fraction
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "extraction fraction α must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if self.metric_batch < 2 {
            return Err(Error::Config("metric_batch must be ≥ 2".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be ≥ 1".into()));
        }
        if !(self.prox_rho >= 0.0) {
            return Err(Error::Config(format!("prox ρ must be ≥ 0, got {}", self.prox_rho)));
        }
        self.mixup.validate()?;
        self.weights.validate()
    }

    fn local_cfg(&self, round: usize, client_id: u64) -> LocalTrainCfg {
        LocalTrainCfg {
            epochs: self.epochs,
            batch_size: self.batch_size,
            mixup: self.mixup,
            weights: self.weights,
            adam: self.adam,
            round,
            run_seed: self.run_seed,
            client_id,
        }
    }
}

/// Cumulative traffic in fp64 scalars. Extraction is charged as one extra
/// model download per participating client (the post-aggregation broadcast
/// FLea needs before clients can extract with θ^(t+1)).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommStats {
    pub model_download: u64,
    pub model_upload: u64,
    pub feature_download: u64,
    pub feature_upload: u64,
    /// One-time pool traffic: gathered once, then broadcast to every client.
    pub pool_transfer: u64,
}

impl CommStats {
    pub fn total(&self) -> u64 {
        self.model_download
            + self.model_upload
            + self.feature_download
            + self.feature_upload
            + self.pool_transfer
    }
}

/// Mutable cross-round state: the global model, the round-scoped feature
/// buffer, the optional baseline pool, and the accounting that outlives
/// rounds (exposure, traffic, best accuracy so far).
#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    pub model: ModelParams,
    /// The next round to run; 1-based.
    pub round: usize,
    pub buffer: FeatureBuffer,
    pub pool: Option<SharedPool>,
    pub exposure: ExposureMatrix,
    pub comm: CommStats,
    pub best_accuracy: f64,
}

/// Immutable per-run inputs shared by every round.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub dataset: &'a Dataset,
    pub test: &'a Dataset,
    pub clients: &'a [ClientDataset],
    pub settings: &'a RunSettings,
}

impl RoundState {
    pub fn new(model: ModelParams, num_clients: usize) -> Self {
        RoundState {
            model,
            round: 1,
            buffer: FeatureBuffer::empty(),
            pool: None,
            exposure: ExposureMatrix::new(num_clients),
            comm: CommStats::default(),
            best_accuracy: 0.0,
        }
    }

    /// Prepare the shared pool for FedMix/FedData (a no-op for the others).
    /// Must run before round 1; sharing raw inputs or averaged inputs exposes
    /// every client pair at once, so ε jumps to its maximum here.
    pub fn init_pool(&mut self, ctx: &RoundContext) -> Result<()> {
        let kind = match ctx.settings.strategy.pool_kind() {
            Some(kind) => kind,
            None => return Ok(()),
        };
        if self.round != 1 {
            return Err(Error::Config(
                "shared pool must be prepared before round 1".into(),
            ));
        }
        if self.pool.is_some() {
            return Err(Error::Config("shared pool already prepared".into()));
        }
        let pool =
            prepare_shared_pool(ctx.dataset, ctx.clients, kind, ctx.settings.run_seed)?;
        let all: Vec<usize> = ctx.clients.iter().map(|c| c.client_id).collect();
        self.exposure.update(&all, &all)?;
        let scalars = (pool.len() * (pool.samples.ncols() + pool.labels.ncols())) as u64;
        self.comm.pool_transfer += scalars * (1 + ctx.clients.len() as u64);
        self.pool = Some(pool);
        Ok(())
    }
}

fn buffer_scalars(buffer: &FeatureBuffer) -> u64 {
    buffer
        .records
        .iter()
        .map(|r| (r.width() + r.soft_label.len()) as u64)
        .sum()
}

/// Train the cohort, either sequentially or chunked across threads. Results
/// come back in cohort order either way, so downstream aggregation (and the
/// first error surfaced, if any) is independent of scheduling.
fn train_cohort(
    state: &RoundState,
    ctx: &RoundContext,
    cohort: &[usize],
) -> Result<Vec<(ModelParams, LossTotals)>> {
    let settings = ctx.settings;
    let work = |k: usize| -> Result<(ModelParams, LossTotals)> {
        let client = &ctx.clients[k];
        let batch = ctx.dataset.batch(&client.indices);
        let cfg = settings.local_cfg(state.round, k as u64);
        let trained = match settings.strategy {
            Strategy::Flea => flea_local_train(
                &state.model,
                &state.model,
                &batch,
                &state.buffer.records,
                &cfg,
            ),
            _ => baseline_local_train(
                settings.strategy,
                &state.model,
                &batch,
                state.pool.as_ref(),
                settings.prox_rho,
                &cfg,
            ),
        };
        trained.map_err(|e| Error::Aggregation { client: k, detail: e.to_string() })
    };
    if settings.threads <= 1 || cohort.len() <= 1 {
        return cohort.iter().map(|&k| work(k)).collect();
    }
    let chunk = cohort.len().div_ceil(settings.threads);
    let work = &work;
    let per_chunk: Vec<Vec<Result<(ModelParams, LossTotals)>>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = cohort
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|&k| work(k)).collect()))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("client worker panicked"))
                .collect()
        });
    per_chunk.into_iter().flatten().collect()
}

/// Run round t (`state.round`): returns the round's metrics row and advances
/// the state to round t+1. Any client failure aborts the whole round with an
/// error naming that client.
pub fn run_round(state: &mut RoundState, ctx: &RoundContext) -> Result<MetricsRecord> {
    let settings = ctx.settings;
    settings.validate()?;
    if ctx.clients.is_empty() {
        return Err(Error::Config("run_round: no clients".into()));
    }
    for (k, client) in ctx.clients.iter().enumerate() {
        if client.client_id != k {
            return Err(Error::Config(format!(
                "client list must be indexed by id: position {k} holds client {}",
                client.client_id
            )));
        }
    }
    if state.exposure.num_clients() != ctx.clients.len() {
        return Err(Error::shape(
            "exposure matrix clients",
            ctx.clients.len(),
            state.exposure.num_clients(),
        ));
    }
    let needs_pool = settings.strategy.pool_kind().is_some();
    if needs_pool && state.pool.is_none() {
        return Err(Error::Config(format!(
            "{} needs a shared pool; call init_pool before the first round",
            settings.strategy
        )));
    }
    if !needs_pool && state.pool.is_some() {
        return Err(Error::Config(format!(
            "{} does not use a shared pool, but one was prepared",
            settings.strategy
        )));
    }

    let start = Instant::now();
    let t = state.round;
    let cohort = sample_clients(ctx.clients.len(), settings.fraction, t, settings.run_seed)?;

    // Broadcast. For FLea the buffer rides along with the model, which is
    // the moment buffer contributors become exposed to the cohort.
    let params = state.model.num_params() as u64;
    state.comm.model_download += params * cohort.len() as u64;
    if settings.strategy == Strategy::Flea && !state.buffer.is_empty() {
        state.exposure.update(&state.buffer.contributors, &cohort)?;
        state.comm.feature_download += buffer_scalars(&state.buffer) * cohort.len() as u64;
    }

    // Local work and aggregation.
    let results = train_cohort(state, ctx, &cohort)?;
    let sizes: Vec<usize> = cohort.iter().map(|&k| ctx.clients[k].len()).collect();
    let models: Vec<ModelParams> = results.iter().map(|(m, _)| m.clone()).collect();
    state.model = aggregate_fedavg(&models, &sizes)?;
    state.comm.model_upload += params * cohort.len() as u64;
    let mut totals = LossTotals::default();
    for (_, t) in &results {
        totals.merge(t);
    }

    // FLea: rebuild the buffer for round t+1 from the cohort's extractions,
    // computed with the *new* global model (one extra download each).
    if settings.strategy == Strategy::Flea {
        state.comm.model_download += params * cohort.len() as u64;
        let locals: Vec<Vec<FeatureRecord>> = cohort
            .iter()
            .map(|&k| {
                extract_features(
                    &state.model,
                    ctx.dataset,
                    &ctx.clients[k],
                    settings.alpha,
                    settings.run_seed,
                    t,
                )
                .map_err(|e| Error::Aggregation { client: k, detail: e.to_string() })
            })
            .collect::<Result<_>>()?;
        let buffer = merge_buffers(locals, t + 1, settings.run_seed)?;
        state.comm.feature_upload += buffer_scalars(&buffer);
        state.buffer = buffer;
    }

    // Evaluation of θ^(t+1).
    let acc = accuracy(&state.model, ctx.test)?;
    if acc > state.best_accuracy {
        state.best_accuracy = acc;
    }
    let train_feats = state.model.forward_front(&ctx.dataset.inputs)?;
    let db_train = db_score(&train_feats, &ctx.dataset.labels)?;
    let test_feats = state.model.forward_front(&ctx.test.inputs)?;
    let db_test = db_score(&test_feats, &ctx.test.labels)?;
    let dcor_seed = mix(settings.run_seed, &[tag::METRIC_BATCH, t as u64]);
    let mean_c = mean_dcor(&state.model, ctx.dataset, settings.metric_batch, dcor_seed)?;

    let record = MetricsRecord {
        round: t,
        strategy: settings.strategy.name().to_string(),
        seed: settings.run_seed,
        accuracy: acc,
        best_accuracy: state.best_accuracy,
        loss_clf: totals.mean_clf(),
        loss_dis: totals.mean_dis(),
        loss_dec: totals.mean_dec(),
        db_train,
        db_test,
        mean_dcor: mean_c,
        exposure_eps: state.exposure.eps(),
        wallclock_ms: if settings.record_timing {
            start.elapsed().as_millis() as u64
        } else {
            0
        },
    };
    record.validate()?;
    state.round = t + 1;
    Ok(record)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// On-disk layout: `state.json` (manifest below), `model.json` + `model.bin`
/// (architecture + flat little-endian fp64 parameters), `buffer.bin`
/// (records flattened as activation then soft label, row-major), and
/// `pool.bin` (samples then labels) when a pool exists.
#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    round: usize,
    best_accuracy: f64,
    comm: CommStats,
    exposure_clients: usize,
    exposure_flags: Vec<bool>,
    buffer_round: usize,
    buffer_width: usize,
    buffer_classes: usize,
    buffer_origins: Vec<usize>,
    buffer_contributors: Vec<usize>,
    pool: Option<PoolManifest>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoolManifest {
    kind: PoolKind,
    rows: usize,
    dims: usize,
    classes: usize,
    contributors: Vec<usize>,
}

impl RoundState {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.model.save(&dir.join("model.json"), &dir.join("model.bin"))?;

        let (width, classes) = match self.buffer.records.first() {
            Some(r) => (r.width(), r.soft_label.len()),
            None => (0, 0),
        };
        let mut flat = Vec::with_capacity(self.buffer.len() * (width + classes));
        for rec in &self.buffer.records {
            flat.extend(rec.activation.iter().copied());
            flat.extend(rec.soft_label.iter().copied());
        }
        write_f64_le(&dir.join("buffer.bin"), &flat)?;

        let pool = match &self.pool {
            Some(p) => {
                let mut flat = Vec::with_capacity(p.samples.len() + p.labels.len());
                flat.extend(p.samples.iter().copied());
                flat.extend(p.labels.iter().copied());
                write_f64_le(&dir.join("pool.bin"), &flat)?;
                Some(PoolManifest {
                    kind: p.kind,
                    rows: p.len(),
                    dims: p.samples.ncols(),
                    classes: p.labels.ncols(),
                    contributors: p.contributors.clone(),
                })
            }
            None => None,
        };

        let manifest = CheckpointManifest {
            round: self.round,
            best_accuracy: self.best_accuracy,
            comm: self.comm,
            exposure_clients: self.exposure.num_clients(),
            exposure_flags: self.exposure.flags().to_vec(),
            buffer_round: self.buffer.round,
            buffer_width: width,
            buffer_classes: classes,
            buffer_origins: self.buffer.records.iter().map(|r| r.origin_client).collect(),
            buffer_contributors: self.buffer.contributors.clone(),
            pool,
        };
        let file = std::fs::File::create(dir.join("state.json"))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let file = std::fs::File::open(dir.join("state.json"))?;
        let manifest: CheckpointManifest =
            serde_json::from_reader(std::io::BufReader::new(file))?;
        let model = ModelParams::load(&dir.join("model.json"), &dir.join("model.bin"))?;

        let flat = read_f64_le(&dir.join("buffer.bin"))?;
        let stride = manifest.buffer_width + manifest.buffer_classes;
        let count = manifest.buffer_origins.len();
        if flat.len() != count * stride {
            return Err(Error::Checkpoint(format!(
                "buffer.bin holds {} scalars, manifest expects {}",
                flat.len(),
                count * stride
            )));
        }
        let records: Vec<FeatureRecord> = manifest
            .buffer_origins
            .iter()
            .enumerate()
            .map(|(i, &origin)| {
                let row = &flat[i * stride..(i + 1) * stride];
                FeatureRecord::new(
                    ndarray::Array1::from(row[..manifest.buffer_width].to_vec()),
                    ndarray::Array1::from(row[manifest.buffer_width..].to_vec()),
                    origin,
                )
            })
            .collect::<Result<_>>()?;
        let buffer = FeatureBuffer {
            round: manifest.buffer_round,
            records,
            contributors: manifest.buffer_contributors,
        };

        let pool = match manifest.pool {
            Some(pm) => {
                let flat = read_f64_le(&dir.join("pool.bin"))?;
                let expect = pm.rows * (pm.dims + pm.classes);
                if flat.len() != expect {
                    return Err(Error::Checkpoint(format!(
                        "pool.bin holds {} scalars, manifest expects {expect}",
                        flat.len()
                    )));
                }
                let split = pm.rows * pm.dims;
                let samples =
                    ndarray::Array2::from_shape_vec((pm.rows, pm.dims), flat[..split].to_vec())
                        .expect("length checked");
                let labels = ndarray::Array2::from_shape_vec(
                    (pm.rows, pm.classes),
                    flat[split..].to_vec(),
                )
                .expect("length checked");
                Some(SharedPool { kind: pm.kind, samples, labels, contributors: pm.contributors })
            }
            None => None,
        };

        Ok(RoundState {
            model,
            round: manifest.round,
            buffer,
            pool,
            exposure: ExposureMatrix::from_flags(
                manifest.exposure_clients,
                manifest.exposure_flags,
            )?,
            comm: manifest.comm,
            best_accuracy: manifest.best_accuracy,
        })
    }
}
