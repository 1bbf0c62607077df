//! FLea client-side math.
//!
//! This module owns the pieces a participating client runs each round:
//! Beta-distributed mix-up weights, feature/label interpolation, the three
//! loss terms (classification, distillation, distance-correlation
//! obfuscation), and the local training loop that stitches them together
//! with the optimizer.
//!
//! The buffer records mixed into local batches are plain
//! ([`FeatureRecord`]) values — (layer-l activation, soft label, origin) — so
//! this module has no dependency on server-side bookkeeping.

mod losses;
mod train;

pub use losses::{distance_correlation, double_center, loss_clf, loss_dis, squared_distance_matrix};
pub(crate) use losses::dcor_with_grad;
pub use train::{flea_local_train, LocalTrainCfg, LossTotals};
pub(crate) use train::gather_batch;

use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One shared feature: a layer-l activation with its soft label and the id
/// of the client that contributed it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub activation: Array1<f64>,
    pub soft_label: Array1<f64>,
    pub origin_client: usize,
}

impl FeatureRecord {
    pub fn new(activation: Array1<f64>, soft_label: Array1<f64>, origin_client: usize) -> Result<Self> {
        if !activation.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical("FeatureRecord::new", "non-finite activation"));
        }
        let sum: f64 = soft_label.sum();
        if (sum - 1.0).abs() > 1e-9 || soft_label.iter().any(|&v| v < 0.0) {
            return Err(Error::numerical(
                "FeatureRecord::new",
                format!("soft label is not a distribution (sum {sum})"),
            ));
        }
        Ok(FeatureRecord { activation, soft_label, origin_client })
    }

    pub fn width(&self) -> usize {
        self.activation.len()
    }
}

/// A batch of buffer records in matrix form, ready for mixing.
#[derive(Debug, Clone)]
pub struct BufferBatch {
    pub features: Array2<f64>,
    pub soft_labels: Array2<f64>,
}

impl BufferBatch {
    /// Stack borrowed records (e.g. a with-replacement sample) into matrices.
    pub fn from_refs(records: &[&FeatureRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Config("BufferBatch: empty record list".into()));
        }
        let width = records[0].width();
        let classes = records[0].soft_label.len();
        let mut features = Array2::zeros((records.len(), width));
        let mut soft_labels = Array2::zeros((records.len(), classes));
        for (i, rec) in records.iter().enumerate() {
            if rec.width() != width || rec.soft_label.len() != classes {
                return Err(Error::shape(
                    "BufferBatch::from_refs",
                    format!("({width}, {classes})"),
                    format!("({}, {}) at record {i}", rec.width(), rec.soft_label.len()),
                ));
            }
            features.row_mut(i).assign(&rec.activation);
            soft_labels.row_mut(i).assign(&rec.soft_label);
        }
        Ok(BufferBatch { features, soft_labels })
    }

    pub fn from_records(records: &[FeatureRecord]) -> Result<Self> {
        BufferBatch::from_refs(&records.iter().collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mix-up weight distribution: symmetric Beta(a, a).
///
/// `beta_override` pins every β to a constant instead of sampling — an
/// ablation/diagnostic knob (β = 1 disables mixing entirely); it is echoed
/// into run manifests like every other hyper-parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixupParams {
    pub a: f64,
    pub beta_override: Option<f64>,
}

impl Default for MixupParams {
    fn default() -> Self {
        MixupParams { a: 2.0, beta_override: None }
    }
}

impl MixupParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(Error::Config(format!("mixup a must be > 0, got {}", self.a)));
        }
        if let Some(b) = self.beta_override {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::Config(format!("beta_override must be in [0,1], got {b}")));
            }
        }
        Ok(())
    }
}

/// Loss-term weights: total = L_clf + λ1·L_dis + λ2·L_dec.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda1: 1.0, lambda2: 3.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be ≥ 0, got λ1={} λ2={}",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

/// Draw `n` i.i.d. mix-up weights from Beta(a, a) as β = g₁/(g₁+g₂) with
/// g₁, g₂ ~ Gamma(a, 1) — exact, seedable, and free of rejection loops.
pub fn sample_beta(params: &MixupParams, n: usize, rng: &mut ChaCha8Rng) -> Result<Array1<f64>> {
    params.validate()?;
    if n == 0 {
        return Err(Error::Config("sample_beta: n must be ≥ 1".into()));
    }
    if let Some(b) = params.beta_override {
        return Ok(Array1::from_elem(n, b));
    }
    let gamma = Gamma::new(params.a, 1.0)
        .map_err(|e| Error::Config(format!("Gamma({}, 1): {e}", params.a)))?;
    Ok(Array1::from_shape_fn(n, |_| {
        let g1: f64 = gamma.sample(rng);
        let g2: f64 = gamma.sample(rng);
        let sum = g1 + g2;
        // Both draws underflowing to zero is astronomically unlikely; define
        // the symmetric midpoint rather than produce NaN.
        if sum == 0.0 { 0.5 } else { g1 / sum }
    }))
}

/// Row-wise convex combination `β_i·a_i + (1−β_i)·b_i`.
pub(crate) fn mix_rows(a: &Array2<f64>, b: &Array2<f64>, betas: &Array1<f64>) -> Array2<f64> {
    let beta_col = betas.view().insert_axis(Axis(1));
    let inv = betas.mapv(|b| 1.0 - b);
    let inv_col = inv.view().insert_axis(Axis(1));
    a * &beta_col + b * &inv_col
}

/// Mix-up interpolation of a local (features, labels) batch with a buffer
/// batch: `f̃_i = β_i f_i + (1−β_i) f^F_i`, `ỹ_i = β_i y_i + (1−β_i) y^F_i`.
pub fn mixup(
    local_feats: &Array2<f64>,
    local_labels: &Array2<f64>,
    buffer_batch: &[&FeatureRecord],
    betas: &Array1<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = local_feats.nrows();
    if local_labels.nrows() != n || buffer_batch.len() != n || betas.len() != n {
        return Err(Error::shape(
            "mixup rows",
            n,
            format!(
                "labels {} / buffer {} / betas {}",
                local_labels.nrows(),
                buffer_batch.len(),
                betas.len()
            ),
        ));
    }
    let bb = BufferBatch::from_refs(buffer_batch)?;
    if bb.features.ncols() != local_feats.ncols() {
        return Err(Error::shape(
            "mixup feature width (local split ≠ buffer split)",
            local_feats.ncols(),
            bb.features.ncols(),
        ));
    }
    if bb.soft_labels.ncols() != local_labels.ncols() {
        return Err(Error::shape(
            "mixup label width",
            local_labels.ncols(),
            bb.soft_labels.ncols(),
        ));
    }
    Ok((
        mix_rows(local_feats, &bb.features, betas),
        mix_rows(local_labels, &bb.soft_labels, betas),
    ))
}
