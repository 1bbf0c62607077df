//! Exact gradients of the composite training loss
//! `L = L_clf + λ1·L_dis + λ2·L_dec` and of plain MSE (used by the
//! reconstruction attacker).
//!
//! Gradient flow, in forward order:
//! - front layers produce raw activations `f` from inputs `x`;
//! - `f` is (optionally) mixed with a buffer batch into `f̃` (labels likewise
//!   into `ỹ`), so front parameters receive the mixing weight β row-wise on
//!   the way back;
//! - the model's back layers turn `f̃` into local logits `z^l`; the *frozen*
//!   global snapshot's back layers turn the same `f̃` into `z^g`. The snapshot
//!   parameters receive no gradient, but gradient does flow through `z^g`
//!   back into `f̃` (and hence into the front parameters);
//! - the obfuscation term is the distance correlation between `x` and the
//!   *raw* (pre-mix) activations `f`, so its gradient enters the front
//!   backward pass directly.
//!
//! The distance-correlation term needs pairwise distances, so it is defined
//! as 0 on single-row batches; it is also skipped (reported as 0) when
//! λ2 = 0.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::flea::{dcor_with_grad, loss_clf, loss_dis, mix_rows, BufferBatch, LossWeights};

use super::{log_softmax, softmax, Activation, Batch, DenseLayer, Gradients, ModelParams};

/// Per-term loss values from one batch: `total = clf + λ1·dis + λ2·dec`.
/// `dis` and `dec` are the raw (unweighted) term values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub clf: f64,
    pub dis: f64,
    pub dec: f64,
}

/// Forward through a layer slice keeping every intermediate output;
/// `trace[0]` is the input, `trace[i+1]` the output of layer i.
fn forward_trace(layers: &[DenseLayer], input: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
    if let Some(first) = layers.first() {
        if input.ncols() != first.in_dim() {
            return Err(Error::shape(
                "forward_trace",
                format!("input width {}", first.in_dim()),
                input.ncols(),
            ));
        }
    }
    let mut trace = Vec::with_capacity(layers.len() + 1);
    trace.push(input.to_owned());
    for layer in layers {
        let next = layer.forward(trace.last().expect("seeded above"));
        trace.push(next);
    }
    Ok(trace)
}

/// Reverse pass through a layer slice. Given ∂L/∂(last output), returns the
/// per-layer weight/bias gradients and ∂L/∂(input).
fn backprop(
    layers: &[DenseLayer],
    trace: &[Array2<f64>],
    d_out: Array2<f64>,
) -> (Vec<Array2<f64>>, Vec<Array1<f64>>, Array2<f64>) {
    debug_assert_eq!(trace.len(), layers.len() + 1);
    let mut d_ws = Vec::with_capacity(layers.len());
    let mut d_bs = Vec::with_capacity(layers.len());
    let mut d_cur = d_out;
    for (i, layer) in layers.iter().enumerate().rev() {
        // dz = d_cur ∘ σ'(z), with σ' expressed through the stored output.
        let dz = match layer.activation {
            Activation::Identity => d_cur,
            act => {
                let mut dz = d_cur;
                dz.zip_mut_with(&trace[i + 1], |d, &y| *d *= act.derivative_from_output(y));
                dz
            }
        };
        d_ws.push(dz.t().dot(&trace[i]));
        d_bs.push(dz.sum_axis(Axis(0)));
        d_cur = dz.dot(&layer.weights);
    }
    d_ws.reverse();
    d_bs.reverse();
    (d_ws, d_bs, d_cur)
}

/// Loss and exact parameter gradients for one (optionally mixed) batch.
///
/// `global_snapshot` enables the distillation term: its back layers produce
/// the teacher logits `z^g` and receive no parameter gradient. `None` means
/// no distillation at all (`dis` reported as 0), which is how the first round
/// trains. A buffer batch and its β vector come together or not at all; a
/// missing buffer with distillation requested is legal — the teacher then
/// sees the unaugmented activations.
pub fn grad_total_loss(
    model: &ModelParams,
    global_snapshot: Option<&ModelParams>,
    batch: &Batch,
    buffer_batch: Option<&BufferBatch>,
    betas: Option<&Array1<f64>>,
    weights: &LossWeights,
) -> Result<(Gradients, LossBreakdown)> {
    weights.validate()?;
    let n = batch.len();
    if n == 0 {
        return Err(Error::Config("grad_total_loss: empty batch".into()));
    }
    if batch.labels.ncols() != model.num_classes() {
        return Err(Error::shape(
            "grad_total_loss labels",
            format!("{} classes", model.num_classes()),
            batch.labels.ncols(),
        ));
    }
    match (buffer_batch, betas) {
        (Some(bb), Some(b)) => {
            if bb.len() != n || b.len() != n {
                return Err(Error::shape(
                    "grad_total_loss buffer rows",
                    n,
                    format!("buffer {} / betas {}", bb.len(), b.len()),
                ));
            }
            if bb.features.ncols() != model.feature_dim() {
                return Err(Error::shape(
                    "grad_total_loss buffer width",
                    model.feature_dim(),
                    bb.features.ncols(),
                ));
            }
            if bb.soft_labels.ncols() != model.num_classes() {
                return Err(Error::shape(
                    "grad_total_loss buffer labels",
                    model.num_classes(),
                    bb.soft_labels.ncols(),
                ));
            }
            if b.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::numerical(
                    "grad_total_loss",
                    "betas outside [0, 1]",
                ));
            }
        }
        (None, None) => {}
        _ => {
            return Err(Error::Config(
                "grad_total_loss: buffer batch and betas must be passed together".into(),
            ));
        }
    }
    if let Some(snap) = global_snapshot {
        if snap.feature_dim() != model.feature_dim()
            || snap.num_classes() != model.num_classes()
        {
            return Err(Error::shape(
                "grad_total_loss snapshot",
                format!("({}, {})", model.feature_dim(), model.num_classes()),
                format!("({}, {})", snap.feature_dim(), snap.num_classes()),
            ));
        }
    }

    // ---- forward ----
    let trace_front = forward_trace(model.front_layers(), &batch.inputs)?;
    let f = trace_front.last().expect("non-empty trace");
    let (f_tilde, y_tilde) = match (buffer_batch, betas) {
        (Some(bb), Some(b)) => (
            mix_rows(f, &bb.features, b),
            mix_rows(&batch.labels, &bb.soft_labels, b),
        ),
        _ => (f.clone(), batch.labels.clone()),
    };
    let trace_back = forward_trace(model.back_layers(), &f_tilde)?;
    let z_l = trace_back.last().expect("non-empty trace");
    let p_l = softmax(z_l);

    // ---- classification term ----
    let clf = loss_clf(z_l, &y_tilde);
    if !clf.is_finite() {
        return Err(Error::numerical("loss_clf", format!("non-finite value {clf}")));
    }
    let mut d_zl = (&p_l - &y_tilde) / n as f64;

    // ---- distillation term ----
    let mut dis = 0.0;
    let mut d_ftilde_snap = None;
    if let Some(snap) = global_snapshot {
        let trace_snap = forward_trace(snap.back_layers(), &f_tilde)?;
        let z_g = trace_snap.last().expect("non-empty trace");
        dis = loss_dis(z_l, z_g);
        if !dis.is_finite() {
            return Err(Error::numerical("loss_dis", format!("non-finite value {dis}")));
        }
        if weights.lambda1 > 0.0 {
            let log_pl = log_softmax(z_l);
            let log_pg = log_softmax(z_g);
            let p_g = softmax(z_g);
            let r = &log_pl - &log_pg;
            // ∂(mean KL)/∂z^l = (1/n)·p^l ∘ (r − KL_row), row-wise.
            let kl_row = (&p_l * &r).sum_axis(Axis(1)).insert_axis(Axis(1));
            let scale = weights.lambda1 / n as f64;
            d_zl += &((&p_l * &(&r - &kl_row)) * scale);
            // ∂(mean KL)/∂z^g = (1/n)·(p^g − p^l); parameters of the snapshot
            // stay frozen but the gradient continues into f̃.
            let d_zg = (&p_g - &p_l) * scale;
            let (_, _, d_in) = backprop(snap.back_layers(), &trace_snap, d_zg);
            d_ftilde_snap = Some(d_in);
        }
    }

    // ---- back half of the model ----
    let (back_w, back_b, mut d_ftilde) = backprop(model.back_layers(), &trace_back, d_zl);
    if let Some(extra) = d_ftilde_snap {
        d_ftilde += &extra;
    }

    // ---- undo the mixing: ∂f̃/∂f = β row-wise ----
    let mut d_f = match betas {
        Some(b) => &d_ftilde * &b.view().insert_axis(Axis(1)),
        None => d_ftilde,
    };

    // ---- obfuscation term on raw activations ----
    let mut dec = 0.0;
    if weights.lambda2 > 0.0 && n >= 2 {
        let (c_raw, d_c) = dcor_with_grad(&batch.inputs, f)?;
        if !c_raw.is_finite() {
            return Err(Error::numerical("loss_dec", format!("non-finite value {c_raw}")));
        }
        dec = c_raw;
        d_f.scaled_add(weights.lambda2, &d_c);
    }

    // ---- front half ----
    let (front_w, front_b, _) = backprop(model.front_layers(), &trace_front, d_f);

    let grads = Gradients {
        weights: front_w.into_iter().chain(back_w).collect(),
        biases: front_b.into_iter().chain(back_b).collect(),
    };
    debug_assert!(grads.shape_matches(model));
    if !grads.all_finite() {
        return Err(Error::numerical("grad_total_loss", "non-finite gradient"));
    }
    let total = clf + weights.lambda1 * dis + weights.lambda2 * dec;
    Ok((grads, LossBreakdown { total, clf, dis, dec }))
}

/// Mean squared error `(1/(n·d)) Σ ‖model(x_i) − t_i‖²` over the full network
/// and its exact parameter gradients. Used to train the reconstruction
/// attacker's decoder (targets are raw inputs, not label distributions).
pub fn grad_mse(
    model: &ModelParams,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<(f64, Gradients)> {
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::Config("grad_mse: empty batch".into()));
    }
    if targets.nrows() != n {
        return Err(Error::shape("grad_mse rows", n, targets.nrows()));
    }
    let trace = forward_trace(&model.layers, inputs)?;
    let pred = trace.last().expect("non-empty trace");
    if pred.ncols() != targets.ncols() {
        return Err(Error::shape("grad_mse output width", targets.ncols(), pred.ncols()));
    }
    let denom = (n * targets.ncols()) as f64;
    let resid = pred - targets;
    let mse = resid.mapv(|v| v * v).sum() / denom;
    if !mse.is_finite() {
        return Err(Error::numerical("grad_mse", format!("non-finite value {mse}")));
    }
    let d_out = resid * (2.0 / denom);
    let (d_ws, d_bs, _) = backprop(&model.layers, &trace, d_out);
    let grads = Gradients { weights: d_ws, biases: d_bs };
    if !grads.all_finite() {
        return Err(Error::numerical("grad_mse", "non-finite gradient"));
    }
    Ok((mse, grads))
}
