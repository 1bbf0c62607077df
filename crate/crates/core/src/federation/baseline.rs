//! Local training for the comparison strategies. All four share the FLea
//! client's skeleton (seeded epoch shuffles, mini-batches, Adam with the same
//! round-decayed learning rate) but differ in what a gradient step sees:
//!
//! - FedAvg: plain cross-entropy on local data.
//! - FedProx: FedAvg plus a proximal pull ρ·(θ − θ^t) towards the broadcast
//!   model, added directly to the gradients.
//! - FedMix: each local batch is input-level mixed with an equal-size
//!   with-replacement draw from the globally shared batch-average pool,
//!   with Beta(2, 2) mixing weights.
//! - FedData: the shared raw-data pool is unioned with the local set once,
//!   then trained like FedAvg.

use ndarray::{concatenate, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::flea::{
    gather_batch, mix_rows, sample_beta, LocalTrainCfg, LossTotals, LossWeights, MixupParams,
};
use crate::nn::{adam_step, grad_total_loss, Batch, ModelParams, OptimizerState};

use super::{param_delta, SharedPool, Strategy};

/// Train one baseline client for `cfg.epochs` epochs starting from the
/// broadcast model. `pool` must be present (and of the matching kind) for
/// FedMix/FedData and is ignored by FedAvg/FedProx; `prox_rho` only matters
/// for FedProx, where 0 makes it coincide with FedAvg bit for bit.
pub fn baseline_local_train(
    strategy: Strategy,
    init: &ModelParams,
    data: &Batch,
    pool: Option<&SharedPool>,
    prox_rho: f64,
    cfg: &LocalTrainCfg,
) -> Result<(ModelParams, LossTotals)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("local train: client has no data".into()));
    }
    if !(prox_rho >= 0.0) {
        return Err(Error::Config(format!("prox ρ must be ≥ 0, got {prox_rho}")));
    }
    let pool = match strategy {
        Strategy::Flea => {
            return Err(Error::Config(
                "baseline_local_train does not handle the flea strategy".into(),
            ));
        }
        Strategy::FedAvg | Strategy::FedProx => None,
        Strategy::FedMix | Strategy::FedData => {
            let expected = strategy.pool_kind().expect("strategies with pools");
            let p = pool.ok_or_else(|| {
                Error::Config(format!("{strategy} requires a shared pool"))
            })?;
            if p.kind != expected {
                return Err(Error::Config(format!(
                    "{strategy} expects a {expected:?} pool, got {:?}",
                    p.kind
                )));
            }
            if p.samples.ncols() != data.inputs.ncols()
                || p.labels.ncols() != data.labels.ncols()
            {
                return Err(Error::shape(
                    "shared pool columns",
                    format!("({}, {})", data.inputs.ncols(), data.labels.ncols()),
                    format!("({}, {})", p.samples.ncols(), p.labels.ncols()),
                ));
            }
            if p.len() == 0 {
                return Err(Error::Config(format!("{strategy}: shared pool is empty")));
            }
            Some(p)
        }
    };

    // FedData sees the union of local data and the raw pool in every epoch;
    // the others train on local rows only.
    let train_data = if strategy == Strategy::FedData {
        let p = pool.expect("checked above");
        Batch {
            inputs: concatenate(Axis(0), &[data.inputs.view(), p.samples.view()])
                .expect("column counts checked"),
            labels: concatenate(Axis(0), &[data.labels.view(), p.labels.view()])
                .expect("column counts checked"),
        }
    } else {
        data.clone()
    };

    // Mixing weights for FedMix are fixed at Beta(2, 2) regardless of the
    // configured FLea shape parameter; the override hook still applies so
    // tests can pin β.
    let fedmix_mixup = MixupParams { a: 2.0, beta_override: cfg.mixup.beta_override };
    let ce_only = LossWeights { lambda1: 0.0, lambda2: 0.0 };

    let mut model = init.clone();
    let mut opt = OptimizerState::new(&model, cfg.adam);
    let mut shuffle_rng =
        derive(cfg, crate::rng::tag::LOCAL_SHUFFLE);
    let mut pool_rng = derive(cfg, crate::rng::tag::POOL);
    let mut beta_rng = derive(cfg, crate::rng::tag::BETA);
    let mut totals = LossTotals::default();

    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = gather_batch(&train_data, chunk);
            if strategy == Strategy::FedMix {
                let p = pool.expect("checked above");
                let draws: Vec<usize> = (0..chunk.len())
                    .map(|_| pool_rng.random_range(0..p.len()))
                    .collect();
                let pool_x = p.samples.select(Axis(0), &draws);
                let pool_y = p.labels.select(Axis(0), &draws);
                let betas = sample_beta(&fedmix_mixup, chunk.len(), &mut beta_rng)?;
                batch = Batch {
                    inputs: mix_rows(&batch.inputs, &pool_x, &betas),
                    labels: mix_rows(&batch.labels, &pool_y, &betas),
                };
            }
            let (mut grads, breakdown) =
                grad_total_loss(&model, None, &batch, None, None, &ce_only)?;
            if strategy == Strategy::FedProx && prox_rho > 0.0 {
                grads.scaled_add(prox_rho, &param_delta(&model, init));
            }
            adam_step(&mut opt, &mut model, &grads, cfg.round)?;
            totals.accumulate(&breakdown);
        }
    }
    Ok((model, totals))
}

fn derive(cfg: &LocalTrainCfg, stream: u64) -> rand_chacha::ChaCha8Rng {
    crate::rng::derive_rng(cfg.run_seed, &[stream, cfg.round as u64, cfg.client_id])
}
