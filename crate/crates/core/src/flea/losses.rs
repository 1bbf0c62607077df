//! The three FLea loss terms.
//!
//! - `loss_clf`: soft-label cross-entropy over a stable softmax.
//! - `loss_dis`: mean KL(local ‖ global) distillation divergence.
//! - `distance_correlation`: the obfuscation statistic c between a batch of
//!   raw inputs and their layer-l activations.
//!
//! The distance matrices use **squared** Euclidean distances
//! `E[i,k] = ‖·_i − ·_k‖²`. Classical distance correlation uses unsquared
//! distances; the squared form is implemented deliberately (it is what the
//! protocol's derivation writes down) and has the same key properties here:
//! c ∈ [0, 1], c = 1 for orthogonal/scaled linear maps, and c = 0 for
//! constant batches. With squared distances the double-centered matrix equals
//! −2·(centered Gram matrix), so c is a Frobenius cosine between Gram
//! matrices and the [0, 1] bounds follow from Cauchy–Schwarz.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::nn::{log_softmax, softmax};

/// Soft-label cross-entropy: `(1/|B|) Σ_i Σ_c −ỹ_i[c]·log p_i[c]` with
/// p = softmax(logits). Non-negative for distribution-valued labels.
pub fn loss_clf(logits: &Array2<f64>, soft_labels: &Array2<f64>) -> f64 {
    assert_eq!(logits.dim(), soft_labels.dim(), "loss_clf shape mismatch");
    let log_p = log_softmax(logits);
    let n = logits.nrows() as f64;
    -(soft_labels * &log_p).sum() / n
}

/// Distillation divergence: mean over the batch of KL(p^local ‖ p^global)
/// = `(1/|B|) Σ_i Σ_c −p_i^l[c]·log(p_i^g[c]/p_i^l[c])` ≥ 0, and exactly 0
/// when the logit matrices are identical.
pub fn loss_dis(local_logits: &Array2<f64>, global_logits: &Array2<f64>) -> f64 {
    assert_eq!(
        local_logits.dim(),
        global_logits.dim(),
        "loss_dis shape mismatch"
    );
    let log_pl = log_softmax(local_logits);
    let log_pg = log_softmax(global_logits);
    let pl = softmax(local_logits);
    let n = local_logits.nrows() as f64;
    ((&log_pl - &log_pg) * &pl).sum() / n
}

/// Pairwise squared Euclidean distance matrix `E[i,k] = ‖rowᵢ − row_k‖²`.
pub fn squared_distance_matrix(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut e = Array2::zeros((n, n));
    for i in 0..n {
        for k in (i + 1)..n {
            let mut d = 0.0;
            for j in 0..a.ncols() {
                let diff = a[[i, j]] - a[[k, j]];
                d += diff * diff;
            }
            e[[i, k]] = d;
            e[[k, i]] = d;
        }
    }
    e
}

/// Double-centering `Ê = C·E·C` with `C = I − J/n`, computed by the actual
/// matrix products. Rows and columns of the result sum to 0 (within fp noise).
pub fn double_center(e: &Array2<f64>) -> Result<Array2<f64>> {
    let n = e.nrows();
    if n == 0 {
        return Err(Error::Config("double_center: empty matrix".into()));
    }
    if e.ncols() != n {
        return Err(Error::shape("double_center", format!("{n}×{n}"), format!("{n}×{}", e.ncols())));
    }
    let mut c = Array2::from_elem((n, n), -1.0 / n as f64);
    for i in 0..n {
        c[[i, i]] += 1.0;
    }
    Ok(c.dot(e).dot(&c))
}

/// ν²(u, v) = (1/n²) Σ_{i,k} Êᵤ[i,k]·Êᵥ[i,k] for already-centered matrices.
fn nu_squared(a_hat: &Array2<f64>, b_hat: &Array2<f64>) -> f64 {
    let n = a_hat.nrows() as f64;
    (a_hat * b_hat).sum() / (n * n)
}

struct DcorParts {
    c_raw: f64,
    a_hat: Array2<f64>,
    b_hat: Array2<f64>,
    nu_xf: f64,
    nu_xx: f64,
    nu_ff: f64,
}

/// Shared value computation; `None` means a degenerate (constant) batch where
/// c is defined as 0.
fn dcor_parts(x: &Array2<f64>, f: &Array2<f64>) -> Result<Option<DcorParts>> {
    let n = x.nrows();
    if f.nrows() != n {
        return Err(Error::shape("distance_correlation rows", n, f.nrows()));
    }
    if n < 2 {
        return Err(Error::Config(format!(
            "distance_correlation needs ≥ 2 rows, got {n}"
        )));
    }
    let a_hat = double_center(&squared_distance_matrix(x))?;
    let b_hat = double_center(&squared_distance_matrix(f))?;
    let nu_xx = nu_squared(&a_hat, &a_hat);
    let nu_ff = nu_squared(&b_hat, &b_hat);
    let denom_sq = nu_xx * nu_ff;
    if !(denom_sq > 0.0) || !denom_sq.is_finite() {
        return Ok(None);
    }
    let nu_xf = nu_squared(&a_hat, &b_hat);
    let c_raw = nu_xf / denom_sq.sqrt();
    Ok(Some(DcorParts { c_raw, a_hat, b_hat, nu_xf, nu_xx, nu_ff }))
}

/// Distance correlation `c = ν²(x,f) / √(ν²(x,x)·ν²(f,f))`, clamped to
/// [0, 1] (the raw value can stray by ~1e-12 of fp noise). Constant batches
/// (either self-term zero) return 0 by definition.
pub fn distance_correlation(x_batch: &Array2<f64>, f_batch: &Array2<f64>) -> Result<f64> {
    Ok(match dcor_parts(x_batch, f_batch)? {
        None => 0.0,
        Some(parts) => parts.c_raw.clamp(0.0, 1.0),
    })
}

/// Raw (unclamped) c plus its exact gradient ∂c/∂f.
///
/// Derivation sketch, with A = Ê_x fixed, B = Ê_f, s = √(ν_xx·ν_ff):
///   ∂c/∂B = (1/n²)·(A/s − (ν_xf·ν_xx/s³)·B)
///   ∂c/∂E_f = C·(∂c/∂B)·C       (centering is self-adjoint)
///   ∂c/∂f_jd = 2·Σ_k (G+Gᵀ)[j,k]·(f_jd − f_kd)   with G = ∂c/∂E_f
/// Degenerate batches get gradient 0 (c is locally constant at 0).
pub(crate) fn dcor_with_grad(x: &Array2<f64>, f: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let parts = match dcor_parts(x, f)? {
        None => return Ok((0.0, Array2::zeros(f.dim()))),
        Some(p) => p,
    };
    let n = x.nrows();
    let n2 = (n * n) as f64;
    let s = (parts.nu_xx * parts.nu_ff).sqrt();
    let coef_b = parts.nu_xf * parts.nu_xx / (s * s * s);
    let d_b = (&parts.a_hat / s - &(&parts.b_hat * coef_b)) / n2;
    let g = double_center(&d_b)?; // C·(∂c/∂B)·C, since C is symmetric
    let sym = &g + &g.t();
    let row_sums: Array1<f64> = sym.sum_axis(Axis(1));
    // ∂c/∂f = 2·(diag(rowsum)·f − S·f)
    let sf = sym.dot(f);
    let mut grad = f * &row_sums.view().insert_axis(Axis(1));
    grad -= &sf;
    grad *= 2.0;
    Ok((parts.c_raw, grad))
}
