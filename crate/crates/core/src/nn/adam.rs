//! Adam optimizer with a per-communication-round learning-rate schedule.
//!
//! The effective learning rate at round `t` (1-based) is
//! `max(floor, η₀ · (1 − decay)^(t−1))` — the base rate decays 2% per round
//! down to a floor of 1e-5 by default. Bias correction uses the optimizer's
//! own step counter, which is independent of the round index because clients
//! are stateless across rounds (a fresh `OptimizerState` per client per round).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, ModelParams};

/// Adam hyper-parameters. `beta1`, `beta2`, `eps` are the standard defaults;
/// `lr0`, `decay`, `floor` define the round schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr0: f64,
    pub decay: f64,
    pub floor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr0: 1e-3,
            decay: 0.02,
            floor: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second-moment accumulators plus a step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Gradients,
    v: Gradients,
    step: u64,
    cfg: AdamConfig,
}

impl OptimizerState {
    pub fn new(model: &ModelParams, cfg: AdamConfig) -> Self {
        OptimizerState {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            step: 0,
            cfg,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Scheduled learning rate for a 1-based round index.
    pub fn effective_lr(&self, round: usize) -> f64 {
        assert!(round >= 1, "rounds are 1-based");
        let lr = self.cfg.lr0 * (1.0 - self.cfg.decay).powi(round as i32 - 1);
        lr.max(self.cfg.floor)
    }
}

/// One Adam update in place. On error (non-finite gradient, shape mismatch)
/// neither `params` nor `state` is modified.
pub fn adam_step(
    state: &mut OptimizerState,
    params: &mut ModelParams,
    grads: &Gradients,
    round: usize,
) -> Result<()> {
    if round < 1 {
        return Err(Error::Config("adam_step: round must be ≥ 1".into()));
    }
    if !grads.shape_matches(params) {
        return Err(Error::shape(
            "adam_step",
            "gradients shaped like params",
            "mismatched gradient shapes",
        ));
    }
    if !grads.all_finite() {
        return Err(Error::numerical("adam_step", "non-finite gradient"));
    }

    state.step += 1;
    let t = state.step;
    let AdamConfig { beta1, beta2, eps, .. } = state.cfg;
    let lr = state.effective_lr(round);
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);

    for (i, layer) in params.layers.iter_mut().enumerate() {
        for (((p, g), m), v) in layer
            .weights
            .iter_mut()
            .zip(grads.weights[i].iter())
            .zip(state.m.weights[i].iter_mut())
            .zip(state.v.weights[i].iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
        }
        for (((p, g), m), v) in layer
            .bias
            .iter_mut()
            .zip(grads.biases[i].iter())
            .zip(state.m.biases[i].iter_mut())
            .zip(state.v.biases[i].iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
        }
    }
    Ok(())
}
