//! Local training loop for a FLea client: E epochs of mini-batch steps where
//! each local batch is mixed with an equal-size with-replacement draw from
//! the shared feature buffer, scored with the composite loss, and applied via
//! Adam. The first round has no buffer yet, so it trains on raw local
//! features with classification + obfuscation only (no mixing, no
//! distillation).
//!
//! All randomness (epoch shuffles, buffer draws, β weights) comes from
//! purpose-tagged streams keyed by (run seed, round, client id), so client
//! results are independent of scheduling order.

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    adam_step, grad_total_loss, AdamConfig, Batch, LossBreakdown, ModelParams, OptimizerState,
};
use crate::rng::{derive_rng, tag};

use super::{sample_beta, BufferBatch, FeatureRecord, LossWeights, MixupParams};

/// Per-client, per-round training settings. `run_seed`, `round`, and
/// `client_id` key the RNG streams; everything else is hyper-parameters.
#[derive(Debug, Clone)]
pub struct LocalTrainCfg {
    pub epochs: usize,
    pub batch_size: usize,
    pub mixup: MixupParams,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub round: usize,
    pub run_seed: u64,
    pub client_id: u64,
}

impl LocalTrainCfg {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("local train: batch_size must be ≥ 1".into()));
        }
        if self.round == 0 {
            return Err(Error::Config("local train: rounds are 1-based".into()));
        }
        self.mixup.validate()?;
        self.weights.validate()
    }
}

/// Summed per-batch loss terms over one local training call; the means are
/// what the metrics sink records.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTotals {
    pub clf_sum: f64,
    pub dis_sum: f64,
    pub dec_sum: f64,
    pub total_sum: f64,
    pub steps: usize,
}

impl LossTotals {
    pub fn accumulate(&mut self, b: &LossBreakdown) {
        self.clf_sum += b.clf;
        self.dis_sum += b.dis;
        self.dec_sum += b.dec;
        self.total_sum += b.total;
        self.steps += 1;
    }

    pub fn merge(&mut self, other: &LossTotals) {
        self.clf_sum += other.clf_sum;
        self.dis_sum += other.dis_sum;
        self.dec_sum += other.dec_sum;
        self.total_sum += other.total_sum;
        self.steps += other.steps;
    }

    fn mean(sum: f64, steps: usize) -> f64 {
        if steps == 0 { 0.0 } else { sum / steps as f64 }
    }

    pub fn mean_clf(&self) -> f64 {
        Self::mean(self.clf_sum, self.steps)
    }

    pub fn mean_dis(&self) -> f64 {
        Self::mean(self.dis_sum, self.steps)
    }

    pub fn mean_dec(&self) -> f64 {
        Self::mean(self.dec_sum, self.steps)
    }

    pub fn mean_total(&self) -> f64 {
        Self::mean(self.total_sum, self.steps)
    }
}

/// Rows of a dataset batch selected by index.
pub(crate) fn gather_batch(data: &Batch, idx: &[usize]) -> Batch {
    Batch {
        inputs: data.inputs.select(Axis(0), idx),
        labels: data.labels.select(Axis(0), idx),
    }
}

/// Train a client model for `cfg.epochs` local epochs and return the updated
/// parameters plus the summed loss terms. `init` is the broadcast global
/// model to start from; `snapshot` is the same parameters kept frozen as the
/// distillation teacher. The buffer must be non-empty from round 2 onward.
pub fn flea_local_train(
    init: &ModelParams,
    snapshot: &ModelParams,
    data: &Batch,
    buffer: &[FeatureRecord],
    cfg: &LocalTrainCfg,
) -> Result<(ModelParams, LossTotals)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("local train: client has no data".into()));
    }
    let augment = cfg.round >= 2;
    if augment {
        if buffer.is_empty() {
            return Err(Error::Config(format!(
                "local train: empty feature buffer in round {}",
                cfg.round
            )));
        }
        for rec in buffer {
            if rec.width() != init.feature_dim() {
                return Err(Error::shape(
                    "local train buffer width (model architecture changed?)",
                    init.feature_dim(),
                    rec.width(),
                ));
            }
            if rec.soft_label.len() != init.num_classes() {
                return Err(Error::shape(
                    "local train buffer label width",
                    init.num_classes(),
                    rec.soft_label.len(),
                ));
            }
        }
    }

    let mut model = init.clone();
    let mut opt = OptimizerState::new(&model, cfg.adam);
    let mut shuffle_rng =
        derive_rng(cfg.run_seed, &[tag::LOCAL_SHUFFLE, cfg.round as u64, cfg.client_id]);
    let mut buffer_rng =
        derive_rng(cfg.run_seed, &[tag::BUFFER_DRAW, cfg.round as u64, cfg.client_id]);
    let mut beta_rng = derive_rng(cfg.run_seed, &[tag::BETA, cfg.round as u64, cfg.client_id]);
    let mut totals = LossTotals::default();

    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = gather_batch(data, chunk);
            let (grads, breakdown) = if augment {
                let refs: Vec<&FeatureRecord> = (0..chunk.len())
                    .map(|_| &buffer[buffer_rng.random_range(0..buffer.len())])
                    .collect();
                let buffer_batch = BufferBatch::from_refs(&refs)?;
                let betas = sample_beta(&cfg.mixup, chunk.len(), &mut beta_rng)?;
                grad_total_loss(
                    &model,
                    Some(snapshot),
                    &batch,
                    Some(&buffer_batch),
                    Some(&betas),
                    &cfg.weights,
                )?
            } else {
                grad_total_loss(&model, None, &batch, None, None, &cfg.weights)?
            };
            adam_step(&mut opt, &mut model, &grads, cfg.round)?;
            totals.accumulate(&breakdown);
        }
    }
    Ok((model, totals))
}
