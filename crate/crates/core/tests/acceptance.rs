//! End-to-end acceptance suite.
//!
//! Ten checks, one test each, covering: oracle equivalence of the analytic
//! gradients and the core statistics (1-4), exposure bookkeeping (5), the
//! skew/scarcity accuracy trend across strategies (6), the privacy-utility
//! sweep over the obfuscation weight (7), attack resistance orderings (8-9),
//! and bit-level run determinism (10). Each test prints a single line
//!
//!     ACCEPTANCE <n> <name>: PASS — <details>   (or FAIL — <reason>)
//!
//! visible under `cargo test -- --nocapture`, and panics on FAIL.
//!
//! Criteria 7-9 share one sweep of three full experiments (λ2 ∈ {0, 3, 6});
//! it runs once behind a `OnceLock` and its artifacts are probed in place.

use std::fs;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use flea_core::config::{DatasetCfg, ModelCfg, PartitionCfg, RunConfig};
use flea_core::datagen::{add_context_marker, Dataset, PartitionMode};
use flea_core::experiment::{run_experiment, ExperimentSummary};
use flea_core::federation::{aggregate_fedavg, RoundState, Strategy};
use flea_core::flea::{distance_correlation, BufferBatch, FeatureRecord, LossWeights};
use flea_core::metrics::{db_score, ExposureMatrix};
use flea_core::nn::{grad_total_loss, Batch, Gradients, LossBreakdown, ModelParams};
use flea_core::probe::{context_attack, reconstruction_attack, AttackerConfig};
use flea_core::rng::derive_rng;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------

/// Run one criterion body, print its verdict line, and panic on failure.
fn criterion<F>(n: usize, name: &str, body: F)
where
    F: FnOnce() -> Result<String, String>,
{
    let start = Instant::now();
    match body() {
        Ok(detail) => {
            println!("ACCEPTANCE {n} {name}: PASS — {detail} [{:.1?}]", start.elapsed());
        }
        Err(reason) => {
            println!("ACCEPTANCE {n} {name}: FAIL — {reason} [{:.1?}]", start.elapsed());
            panic!("acceptance criterion {n} ({name}) failed: {reason}");
        }
    }
}

fn scratch(sub: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(sub)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

// ---------------------------------------------------------------------
// Criterion 1 — analytic gradients vs central finite differences
// ---------------------------------------------------------------------

/// One loss term to check: evaluate the model under `weights`, read the value
/// with `value`, and (optionally) isolate the term's gradient by subtracting
/// the gradient taken under `base` weights (linearity of the combined loss).
struct Term {
    name: &'static str,
    weights: LossWeights,
    base: Option<LossWeights>,
    value: fn(&LossBreakdown) -> f64,
}

#[test]
fn criterion_01_gradient_fidelity() {
    criterion(1, "gradient fidelity", || {
        let mut worst: f64 = 0.0;
        let mut checked = 0usize;
        for trial in 0..20u64 {
            let mut rng = derive_rng(0xACCE_0001, &[trial]);
            let input_dim = rng.random_range(2..5);
            let classes = rng.random_range(2..5);
            let depth = rng.random_range(2..4); // 1-2 hidden layers + output
            let hidden: Vec<usize> = (1..depth).map(|_| rng.random_range(3..6)).collect();
            let model = ModelParams::init(input_dim, &hidden, classes, 1, &mut rng)
                .map_err(|e| e.to_string())?;
            let snapshot = ModelParams::init(input_dim, &hidden, classes, 1, &mut rng)
                .map_err(|e| e.to_string())?;

            let n = rng.random_range(3..7);
            let inputs = Array2::from_shape_fn((n, input_dim), |_| rng.random_range(-2.0..2.0));
            let labels = random_soft_labels(n, classes, &mut rng);
            let batch = Batch::new(inputs, labels).map_err(|e| e.to_string())?;

            let feature_dim = model.feature_dim();
            let records: Vec<FeatureRecord> = (0..n)
                .map(|i| {
                    let act =
                        Array1::from_shape_fn(feature_dim, |_| rng.random_range(-1.5..1.5));
                    let soft = random_soft_labels(1, classes, &mut rng).row(0).to_owned();
                    FeatureRecord::new(act, soft, i)
                })
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let buffer = BufferBatch::from_records(&records).map_err(|e| e.to_string())?;
            let betas = Array1::from_shape_fn(n, |_| rng.random_range(0.1..0.9));

            let eval = |m: &ModelParams, w: &LossWeights| -> Result<LossBreakdown, String> {
                grad_total_loss(m, Some(&snapshot), &batch, Some(&buffer), Some(&betas), w)
                    .map(|(_, b)| b)
                    .map_err(|e| e.to_string())
            };
            let grad = |w: &LossWeights| -> Result<Gradients, String> {
                grad_total_loss(&model, Some(&snapshot), &batch, Some(&buffer), Some(&betas), w)
                    .map(|(g, _)| g)
                    .map_err(|e| e.to_string())
            };

            let off = LossWeights { lambda1: 0.0, lambda2: 0.0 };
            let combined = LossWeights {
                lambda1: rng.random_range(0.2..4.0),
                lambda2: rng.random_range(0.2..4.0),
            };
            let terms = [
                Term { name: "clf", weights: off, base: None, value: |b| b.clf },
                Term {
                    name: "dis",
                    weights: LossWeights { lambda1: 1.0, lambda2: 0.0 },
                    base: Some(off),
                    value: |b| b.dis,
                },
                Term {
                    name: "dec",
                    weights: LossWeights { lambda1: 0.0, lambda2: 1.0 },
                    base: Some(off),
                    value: |b| b.dec,
                },
                Term { name: "combined", weights: combined, base: None, value: |b| b.total },
            ];

            for term in &terms {
                let mut analytic = grad(&term.weights)?;
                if let Some(base) = &term.base {
                    let base_grad = grad(base)?;
                    analytic.scaled_add(-1.0, &base_grad);
                }
                for l in 0..model.layers.len() {
                    let (rows, cols) = model.layers[l].weights.dim();
                    for i in 0..rows {
                        for j in 0..cols {
                            let got = analytic.weights[l][[i, j]];
                            let fd = central_difference(&model, l, Entry::Weight(i, j), |m| {
                                eval(m, &term.weights).map(|b| (term.value)(&b))
                            })?;
                            check_close(term.name, got, fd, &mut worst)?;
                            checked += 1;
                        }
                        let got = analytic.biases[l][i];
                        let fd = central_difference(&model, l, Entry::Bias(i), |m| {
                            eval(m, &term.weights).map(|b| (term.value)(&b))
                        })?;
                        check_close(term.name, got, fd, &mut worst)?;
                        checked += 1;
                    }
                }
            }
        }
        Ok(format!(
            "20 random models, {checked} partial derivatives across clf/dis/dec/combined, \
             worst relative error {worst:.2e} < 1e-4"
        ))
    });
}

fn random_soft_labels(n: usize, classes: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut labels = Array2::from_shape_fn((n, classes), |_| rng.random_range(0.05..1.0));
    for mut row in labels.rows_mut() {
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    labels
}

#[derive(Clone, Copy)]
enum Entry {
    Weight(usize, usize),
    Bias(usize),
}

/// Central finite difference of `value` in one parameter of layer `l`.
fn central_difference<F>(
    model: &ModelParams,
    l: usize,
    entry: Entry,
    mut value: F,
) -> Result<f64, String>
where
    F: FnMut(&ModelParams) -> Result<f64, String>,
{
    let theta = match entry {
        Entry::Weight(i, j) => model.layers[l].weights[[i, j]],
        Entry::Bias(i) => model.layers[l].bias[i],
    };
    let h = 1e-5 * theta.abs().max(1.0);
    let mut probe = model.clone();
    let set = |m: &mut ModelParams, v: f64| match entry {
        Entry::Weight(i, j) => m.layers[l].weights[[i, j]] = v,
        Entry::Bias(i) => m.layers[l].bias[i] = v,
    };
    set(&mut probe, theta + h);
    let plus = value(&probe)?;
    set(&mut probe, theta - h);
    let minus = value(&probe)?;
    Ok((plus - minus) / (2.0 * h))
}

fn check_close(name: &str, analytic: f64, fd: f64, worst: &mut f64) -> Result<(), String> {
    let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
    *worst = worst.max(rel);
    if rel < 1e-4 {
        Ok(())
    } else {
        Err(format!(
            "{name} gradient mismatch: analytic {analytic:.8e} vs finite difference {fd:.8e} \
             (relative error {rel:.2e} ≥ 1e-4)"
        ))
    }
}

// ---------------------------------------------------------------------
// Criterion 2 — distance correlation vs a direct-definition oracle
// ---------------------------------------------------------------------

/// Straight-line reimplementation of the statistic from its definition:
/// pairwise squared Euclidean distances, double centering via the
/// row/column/grand-mean identity, ν² sums, then the normalized ratio.
fn dcor_oracle(x: &Array2<f64>, f: &Array2<f64>) -> f64 {
    let n = x.nrows();
    let centered = |m: &Array2<f64>| -> Vec<Vec<f64>> {
        let mut e = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut d = 0.0;
                for k in 0..m.ncols() {
                    let diff = m[[i, k]] - m[[j, k]];
                    d += diff * diff;
                }
                e[i][j] = d;
            }
        }
        let mut row = vec![0.0; n];
        let mut col = vec![0.0; n];
        let mut grand = 0.0;
        for i in 0..n {
            for j in 0..n {
                row[i] += e[i][j] / n as f64;
                col[j] += e[i][j] / n as f64;
                grand += e[i][j] / (n * n) as f64;
            }
        }
        let mut hat = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                hat[i][j] = e[i][j] - row[i] - col[j] + grand;
            }
        }
        hat
    };
    let a = centered(x);
    let b = centered(f);
    let mut nu_xf = 0.0;
    let mut nu_xx = 0.0;
    let mut nu_ff = 0.0;
    for i in 0..n {
        for j in 0..n {
            nu_xf += a[i][j] * b[i][j];
            nu_xx += a[i][j] * a[i][j];
            nu_ff += b[i][j] * b[i][j];
        }
    }
    let denom = (nu_xx * nu_ff).sqrt();
    if denom > 0.0 {
        nu_xf / denom
    } else {
        0.0
    }
}

#[test]
fn criterion_02_distance_correlation_oracle() {
    criterion(2, "distance correlation oracle", || {
        let mut rng = derive_rng(0xACCE_0002, &[]);
        let mut worst: f64 = 0.0;
        for trial in 0..1000u32 {
            let n = rng.random_range(2..9);
            let dx = rng.random_range(1..5);
            let df = rng.random_range(1..5);
            let x = Array2::from_shape_fn((n, dx), |_| rng.random_range(-3.0..3.0));
            let f = match trial % 3 {
                // independent batch
                0 => Array2::from_shape_fn((n, df), |_| rng.random_range(-3.0..3.0)),
                // nonlinear function of x
                1 => {
                    let w = Array2::from_shape_fn((dx, df), |_| rng.random_range(-1.0..1.0));
                    x.dot(&w).mapv(f64::tanh)
                }
                // linear map of x
                _ => {
                    let w = Array2::from_shape_fn((dx, df), |_| rng.random_range(-1.0..1.0));
                    x.dot(&w)
                }
            };
            let got = distance_correlation(&x, &f).map_err(|e| e.to_string())?;
            if !(0.0..=1.0).contains(&got) {
                return Err(format!("c = {got} out of [0, 1] on trial {trial}"));
            }
            let want = dcor_oracle(&x, &f);
            let diff = (got - want).abs();
            worst = worst.max(diff);
            if diff >= 1e-10 {
                return Err(format!(
                    "trial {trial} (n={n}, {dx}→{df} dims): got {got:.15} vs oracle \
                     {want:.15}, |Δ| = {diff:.2e} ≥ 1e-10"
                ));
            }
        }

        // Perfect correlation for linear maps (distances scale uniformly).
        let x = Array2::from_shape_fn((8, 3), |_| rng.random_range(-2.0..2.0));
        let affine = x.mapv(|v| 2.0 * v + 1.0);
        let c_affine = distance_correlation(&x, &affine).map_err(|e| e.to_string())?;
        let x2 = Array2::from_shape_fn((10, 2), |_| rng.random_range(-2.0..2.0));
        let (s, c) = (0.7f64.sin(), 0.7f64.cos());
        let rotation = ndarray::array![[c, -s], [s, c]];
        let rotated = x2.dot(&rotation.t()).mapv(|v| 1.7 * v);
        let c_rot = distance_correlation(&x2, &rotated).map_err(|e| e.to_string())?;
        for (label, val) in [("affine", c_affine), ("scaled rotation", c_rot)] {
            if !(val > 1.0 - 1e-9 && val <= 1.0) {
                return Err(format!("{label} map should give c = 1, got {val:.15}"));
            }
        }

        // Degenerate (constant) batch is defined as 0.
        let constant = Array2::from_elem((4, 2), 0.5);
        let other = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let c_const = distance_correlation(&constant, &other).map_err(|e| e.to_string())?;
        if c_const != 0.0 {
            return Err(format!("constant batch should give c = 0, got {c_const}"));
        }

        Ok(format!(
            "1000 random batch pairs match the definition (worst |Δ| {worst:.2e} < 1e-10); \
             c = 1 on affine and scaled-rotation maps; bounds hold everywhere"
        ))
    });
}

// ---------------------------------------------------------------------
// Criterion 3 — weighted parameter averaging is exact in fp64
// ---------------------------------------------------------------------

#[test]
fn criterion_03_aggregation_exactness() {
    criterion(3, "aggregation exactness", || {
        let mut rng = derive_rng(0xACCE_0003, &[]);
        for trial in 0..60u32 {
            let input_dim = rng.random_range(2..6);
            let classes = rng.random_range(2..5);
            let depth = rng.random_range(2..4);
            let hidden: Vec<usize> = (1..depth).map(|_| rng.random_range(2..6)).collect();
            let k = rng.random_range(1..6);
            let models: Vec<ModelParams> = (0..k)
                .map(|_| ModelParams::init(input_dim, &hidden, classes, 1, &mut rng))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(1..10)).collect();
            let got = aggregate_fedavg(&models, &sizes).map_err(|e| e.to_string())?;

            // Oracle: per-coordinate weighted mean accumulated client by
            // client, i.e. the same fp operation sequence — must be bitwise.
            let total: usize = sizes.iter().sum();
            for (l, layer) in got.layers.iter().enumerate() {
                let (rows, cols) = layer.weights.dim();
                for i in 0..rows {
                    for j in 0..cols {
                        let mut acc = 0.0;
                        for (m, &size) in models.iter().zip(&sizes) {
                            acc += size as f64 / total as f64 * m.layers[l].weights[[i, j]];
                        }
                        if layer.weights[[i, j]] != acc {
                            return Err(format!(
                                "trial {trial}: weight[{l}][{i},{j}] = {:.17e} differs from \
                                 exact weighted mean {acc:.17e}",
                                layer.weights[[i, j]]
                            ));
                        }
                    }
                    let mut acc = 0.0;
                    for (m, &size) in models.iter().zip(&sizes) {
                        acc += size as f64 / total as f64 * m.layers[l].bias[i];
                    }
                    if layer.bias[i] != acc {
                        return Err(format!(
                            "trial {trial}: bias[{l}][{i}] differs from exact weighted mean"
                        ));
                    }
                }
            }

            // Single client: aggregation must be the identity, bitwise.
            let lone = aggregate_fedavg(&models[..1], &sizes[..1]).map_err(|e| e.to_string())?;
            if lone != models[0] {
                return Err(format!("trial {trial}: single-client aggregate is not identity"));
            }
        }

        // Symmetric cancellation: θ and −θ at equal sizes average to exactly 0.
        let mut model =
            ModelParams::init(4, &[5, 3], 3, 1, &mut rng).map_err(|e| e.to_string())?;
        model.layers[0].weights[[0, 0]] = 0.3; // pin one coordinate for the message
        let mut negated = model.clone();
        for layer in &mut negated.layers {
            layer.weights.mapv_inplace(|v| -v);
            layer.bias.mapv_inplace(|v| -v);
        }
        let zero = aggregate_fedavg(&[model, negated], &[7, 7]).map_err(|e| e.to_string())?;
        for (l, layer) in zero.layers.iter().enumerate() {
            if layer.weights.iter().chain(layer.bias.iter()).any(|&v| v != 0.0) {
                return Err(format!("θ/−θ average not exactly zero in layer {l}"));
            }
        }

        Ok("60 random cohorts bitwise-equal to the per-coordinate weighted mean; \
            single-client identity and θ/−θ cancellation exact"
            .into())
    });
}

// ---------------------------------------------------------------------
// Criterion 4 — cluster-separation score vs a direct-formula oracle
// ---------------------------------------------------------------------

fn db_oracle(features: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let k = distinct.len();
    let dims = features.ncols();
    let mut centroids = vec![vec![0.0; dims]; k];
    let mut scatters = vec![0.0; k];
    for (ci, &label) in distinct.iter().enumerate() {
        let members: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] == label).collect();
        for &i in &members {
            for d in 0..dims {
                centroids[ci][d] += features[[i, d]];
            }
        }
        for c in &mut centroids[ci] {
            *c /= members.len() as f64;
        }
        for &i in &members {
            let mut sq = 0.0;
            for d in 0..dims {
                let diff = features[[i, d]] - centroids[ci][d];
                sq += diff * diff;
            }
            scatters[ci] += sq.sqrt();
        }
        scatters[ci] /= members.len() as f64;
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..k {
        let mut worst: Option<f64> = None;
        for j in 0..k {
            if i == j {
                continue;
            }
            let mut sq = 0.0;
            for d in 0..dims {
                let diff = centroids[i][d] - centroids[j][d];
                sq += diff * diff;
            }
            let dist = sq.sqrt();
            if dist == 0.0 {
                continue;
            }
            let ratio = (scatters[i] + scatters[j]) / dist;
            worst = Some(worst.map_or(ratio, |w: f64| w.max(ratio)));
        }
        if let Some(w) = worst {
            total += w;
            counted += 1;
        }
    }
    total / counted as f64
}

#[test]
fn criterion_04_db_score_oracle() {
    criterion(4, "cluster-separation oracle", || {
        let mut rng = derive_rng(0xACCE_0004, &[]);
        let mut worst: f64 = 0.0;
        for trial in 0..100u32 {
            let n = rng.random_range(6..30);
            let dims = rng.random_range(2..5);
            let k = rng.random_range(2..5);
            let features = Array2::from_shape_fn((n, dims), |_| rng.random_range(-4.0..4.0));
            let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            for (i, label) in labels.iter_mut().enumerate().take(k) {
                *label = i; // guarantee every cluster is non-empty
            }
            let got = db_score(&features, &labels).map_err(|e| e.to_string())?;
            let want = db_oracle(&features, &labels);
            let diff = (got - want).abs();
            worst = worst.max(diff);
            if diff >= 1e-10 {
                return Err(format!(
                    "trial {trial} (n={n}, k={k}): got {got:.15} vs oracle {want:.15}, \
                     |Δ| = {diff:.2e} ≥ 1e-10"
                ));
            }
        }
        Ok(format!(
            "100 random labeled feature sets match the direct formula \
             (worst |Δ| {worst:.2e} < 1e-10)"
        ))
    });
}

// ---------------------------------------------------------------------
// Criterion 5 — exposure bookkeeping on a scripted schedule
// ---------------------------------------------------------------------

#[test]
fn criterion_05_exposure_bookkeeping() {
    criterion(5, "exposure bookkeeping", || {
        // Six clients, three disjoint two-client cohorts. The buffer built by
        // round t's cohort is consumed by round t+1's cohort, so exposure
        // updates lag the schedule by one round: nothing is shared in round 1.
        let mut exposure = ExposureMatrix::new(6);
        let cohorts: [&[usize]; 3] = [&[0, 1], &[2, 3], &[4, 5]];

        // Hand count: each update marks 2 senders × 2 receivers = 4 ordered
        // pairs plus their mirrors → 8 ones out of 6² cells.
        let expected = [0.0, 8.0 / 36.0, 16.0 / 36.0];

        let mut seen = Vec::new();
        seen.push(exposure.eps()); // after round 1: no buffer yet
        for t in 1..3 {
            exposure.update(cohorts[t - 1], cohorts[t]).map_err(|e| e.to_string())?;
            seen.push(exposure.eps());
        }

        for (round, (&got, &want)) in seen.iter().zip(&expected).enumerate() {
            if got != want {
                return Err(format!(
                    "round {}: ε = {got} but hand count gives {want}",
                    round + 1
                ));
            }
        }
        for pair in seen.windows(2) {
            if pair[1] < pair[0] {
                return Err(format!("ε decreased: {} → {}", pair[0], pair[1]));
            }
        }
        if seen.iter().any(|&e| !(0.0..=1.0).contains(&e)) {
            return Err(format!("ε left [0, 1]: {seen:?}"));
        }
        Ok(format!(
            "scripted 3-round schedule gives ε = [{}, {:.4}, {:.4}] exactly as hand-counted, \
             non-decreasing and ≤ 1",
            seen[0], seen[1], seen[2]
        ))
    });
}

// ---------------------------------------------------------------------
// Criterion 6 — accuracy trend under label skew and scarcity
// ---------------------------------------------------------------------

/// Six-class ring mixture in 2-D, 60 clients with two labels each (Qua(2))
/// and ~40 samples each, trained for 60 rounds. Under this skew, raw-input
/// mix-up pairs cross foreign class regions while feature-space mix-up stays
/// benign, and plain averaging drifts — which is exactly the ordering the
/// protocol is supposed to produce.
fn trend_config(strategy: Strategy, out: PathBuf) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.dataset = DatasetCfg::Generated {
        classes: 6,
        dims: 2,
        per_class: 400,
        spread: 0.45,
        test_per_class: 400,
        data_seed: 1,
    };
    cfg.partition = PartitionCfg { mode: PartitionMode::Qua(2), num_clients: 60, mean_size: 40 };
    cfg.model = ModelCfg { hidden: vec![8, 8], split_index: 1 };
    cfg.strategy = strategy;
    cfg.rounds = 60;
    cfg.fraction = 0.1;
    cfg.epochs = 15;
    cfg.batch_size = 32;
    cfg.metric_batch = 64;
    cfg.adam.lr0 = 3e-3;
    cfg.weights = LossWeights { lambda1: 3.0, lambda2: 0.0 };
    cfg.alpha = 0.25;
    cfg.seeds = vec![0, 1, 2, 3, 4];
    cfg.out_dir = out;
    cfg
}

#[test]
fn criterion_06_skew_scarcity_trend() {
    criterion(6, "skew/scarcity trend", || {
        let root = scratch("trend");
        let _ = fs::remove_dir_all(&root);
        let mut means = Vec::new();
        for strategy in [Strategy::Flea, Strategy::FedMix, Strategy::FedAvg] {
            let cfg = trend_config(strategy, root.join(strategy.name()));
            let summary = run_experiment(&cfg).map_err(|e| e.to_string())?;
            if !summary.all_succeeded() {
                return Err(format!("{strategy} run had failing seeds: {summary:?}"));
            }
            means.push(summary.mean_accuracy.expect("all seeds succeeded"));
        }
        let (flea, fedmix, fedavg) = (means[0], means[1], means[2]);
        if !(flea > fedmix && fedmix > fedavg) {
            return Err(format!(
                "mean final accuracy not ordered: flea {flea:.4}, fedmix {fedmix:.4}, \
                 fedavg {fedavg:.4}"
            ));
        }
        if flea < fedavg + 0.05 {
            return Err(format!(
                "flea {flea:.4} does not beat fedavg {fedavg:.4} by ≥ 5 points"
            ));
        }
        Ok(format!(
            "mean final accuracy over 5 seeds: flea {flea:.4} > fedmix {fedmix:.4} > \
             fedavg {fedavg:.4}, gap to fedavg {:.1} points ≥ 5",
            (flea - fedavg) * 100.0
        ))
    });
}

// ---------------------------------------------------------------------
// Shared sweep over the obfuscation weight (criteria 7-9)
// ---------------------------------------------------------------------

/// Four-class mixture in 8-D under Qua(2) skew, 20 clients, 40 rounds of the
/// feature-sharing strategy. Small enough to run three times in seconds yet
/// long enough for the obfuscation penalty to push c̄ below the attack
/// ordering's applicability threshold of 0.65.
fn sweep_config(lambda2: f64, out: PathBuf) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.dataset = DatasetCfg::Generated {
        classes: 4,
        dims: 8,
        per_class: 250,
        spread: 0.6,
        test_per_class: 50,
        data_seed: 1,
    };
    cfg.partition = PartitionCfg { mode: PartitionMode::Qua(2), num_clients: 20, mean_size: 40 };
    cfg.model = ModelCfg { hidden: vec![24, 12], split_index: 1 };
    cfg.strategy = Strategy::Flea;
    cfg.rounds = 40;
    cfg.fraction = 0.2;
    cfg.epochs = 5;
    cfg.batch_size = 32;
    cfg.metric_batch = 64;
    cfg.weights.lambda2 = lambda2;
    cfg.seeds = vec![0, 1, 2, 3, 4];
    cfg.out_dir = out;
    cfg
}

struct Sweep {
    /// (λ2, config, summary) for λ2 = 0, 3, 6.
    runs: Vec<(f64, RunConfig, ExperimentSummary)>,
    train: Dataset,
}

impl Sweep {
    fn load_final_model(&self, run: usize, seed: u64) -> Result<ModelParams, String> {
        let dir = self.runs[run].1.out_dir.join(format!("seed_{seed}/checkpoint_final"));
        RoundState::load(&dir).map(|state| state.model).map_err(|e| e.to_string())
    }
}

fn sweep() -> Result<&'static Sweep, String> {
    static SWEEP: OnceLock<Result<Sweep, String>> = OnceLock::new();
    SWEEP
        .get_or_init(|| {
            let root = scratch("sweep");
            let _ = fs::remove_dir_all(&root);
            let mut runs = Vec::new();
            for lambda2 in [0.0, 3.0, 6.0] {
                let cfg = sweep_config(lambda2, root.join(format!("lambda2_{lambda2}")));
                let summary = run_experiment(&cfg).map_err(|e| e.to_string())?;
                if !summary.all_succeeded() {
                    return Err(format!("sweep λ2={lambda2} had failing seeds: {summary:?}"));
                }
                runs.push((lambda2, cfg, summary));
            }
            let (train, _) = runs[0].1.dataset.build().map_err(|e| e.to_string())?;
            Ok(Sweep { runs, train })
        })
        .as_ref()
        .map_err(Clone::clone)
}

// ---------------------------------------------------------------------
// Criterion 7 — obfuscation weight drives measured correlation down
// ---------------------------------------------------------------------

#[test]
fn criterion_07_privacy_utility_sweep() {
    criterion(7, "privacy-utility sweep", || {
        let sweep = sweep()?;
        let dcors: Vec<f64> = sweep
            .runs
            .iter()
            .map(|(_, _, s)| s.mean_final_dcor.expect("all seeds succeeded"))
            .collect();
        if !(dcors[0] > dcors[1] && dcors[1] > dcors[2]) {
            return Err(format!(
                "mean c̄ not strictly decreasing in λ2: {dcors:.4?} for λ2 = 0, 3, 6"
            ));
        }
        Ok(format!(
            "mean final c̄ strictly decreasing in λ2: {:.4} (λ2=0) > {:.4} (λ2=3) > \
             {:.4} (λ2=6), over 5 seeds each",
            dcors[0], dcors[1], dcors[2]
        ))
    });
}

// ---------------------------------------------------------------------
// Criterion 8 — obfuscation raises reconstruction error
// ---------------------------------------------------------------------

#[test]
fn criterion_08_reconstruction_resistance() {
    criterion(8, "reconstruction resistance", || {
        let sweep = sweep()?;
        let attacker = AttackerConfig::default();
        let mut means = Vec::new();
        let mut per_seed = Vec::new();
        for run in [0usize, 1] {
            let (lambda2, cfg, summary) = &sweep.runs[run];
            let mut mses = Vec::new();
            for &seed in &cfg.seeds {
                let model = sweep.load_final_model(run, seed)?;
                let activations =
                    model.forward_front(&sweep.train.inputs).map_err(|e| e.to_string())?;
                let report = reconstruction_attack(
                    &activations,
                    &sweep.train.inputs,
                    &[200],
                    &attacker,
                    7,
                    *lambda2,
                    summary.mean_final_dcor.unwrap_or(f64::NAN),
                )
                .map_err(|e| e.to_string())?;
                mses.push(report.curve[0]);
            }
            means.push(mean(&mses));
            per_seed.push(mses);
        }
        if means[1] <= means[0] {
            return Err(format!(
                "held-out reconstruction MSE did not increase with obfuscation: \
                 λ2=0 mean {:.4} (per seed {:.4?}), λ2=3 mean {:.4} (per seed {:.4?})",
                means[0], per_seed[0], means[1], per_seed[1]
            ));
        }
        Ok(format!(
            "equal-budget attacker reconstructs λ2=0 activations to MSE {:.4} but only \
             {:.4} on λ2=3 (means over 5 seeds; higher is harder)",
            means[0], means[1]
        ))
    });
}

// ---------------------------------------------------------------------
// Criterion 9 — detecting a context marker needs more samples on
// obfuscated activations than on raw-input batch averages
// ---------------------------------------------------------------------

#[test]
fn criterion_09_context_attack_ordering() {
    criterion(9, "context attack ordering", || {
        let sweep = sweep()?;
        let (_, cfg3, summary3) = &sweep.runs[1]; // λ2 = 3 run
        let cbar = summary3.mean_final_dcor.expect("all seeds succeeded");
        if cbar > 0.65 {
            return Err(format!(
                "ordering only claimed for obfuscated models: c̄ = {cbar:.4} > 0.65"
            ));
        }

        // Plant an additive marker on the first 3 coordinates of half the
        // training inputs; the attacker must tell marked from unmarked.
        let marker = vec![2.0, 2.0, 2.0];
        let marked =
            add_context_marker(&sweep.train, &marker, 0.5, 11).map_err(|e| e.to_string())?;
        let flags = marked.context_flags.clone().expect("marker sets flags");

        // The input-averaging baseline exposes per-batch means of raw inputs:
        // average groups of 5 (the shared-pool group size) within each flag
        // class so every average inherits a clean flag.
        let group = 5;
        let mut avg_rows: Vec<f64> = Vec::new();
        let mut avg_flags = Vec::new();
        for class in [false, true] {
            let rows: Vec<usize> = (0..marked.len()).filter(|&i| flags[i] == class).collect();
            for chunk in rows.chunks(group) {
                let mut avg = vec![0.0; marked.dims()];
                for &i in chunk {
                    for (j, v) in avg.iter_mut().enumerate() {
                        *v += marked.inputs[[i, j]];
                    }
                }
                for v in &mut avg {
                    *v /= chunk.len() as f64;
                }
                avg_rows.extend(avg);
                avg_flags.push(class);
            }
        }
        let avg_inputs =
            Array2::from_shape_vec((avg_flags.len(), marked.dims()), avg_rows)
                .map_err(|e| e.to_string())?;

        let attacker = AttackerConfig::default();
        let sizes = [4usize, 8, 16, 32, 64, 128];
        // First training size reaching 90% held-out detection accuracy;
        // a curve that never gets there scores one step past the ladder.
        let needed = |curve: &[f64]| {
            sizes.iter().zip(curve).find(|(_, a)| **a >= 0.9).map_or(256, |(s, _)| *s)
        };

        let mut on_activations = Vec::new();
        let mut on_averages = Vec::new();
        for &seed in &cfg3.seeds {
            let model = sweep.load_final_model(1, seed)?;
            let features = model.forward_front(&marked.inputs).map_err(|e| e.to_string())?;
            let report = context_attack(&features, &flags, &sizes, &attacker, seed, 3.0, cbar)
                .map_err(|e| e.to_string())?;
            on_activations.push(needed(&report.curve) as f64);
            let report = context_attack(&avg_inputs, &avg_flags, &sizes, &attacker, seed, 0.0, 0.0)
                .map_err(|e| e.to_string())?;
            on_averages.push(needed(&report.curve) as f64);
        }
        let (flea_mean, mix_mean) = (mean(&on_activations), mean(&on_averages));
        if flea_mean <= mix_mean {
            return Err(format!(
                "90% detection did not need more samples on obfuscated activations: \
                 {flea_mean:.1} (per seed {on_activations:?}) vs {mix_mean:.1} on input \
                 averages (per seed {on_averages:?})"
            ));
        }
        Ok(format!(
            "90% marker detection needs {flea_mean:.1} samples on obfuscated activations \
             (c̄ = {cbar:.2}) vs {mix_mean:.1} on raw-input batch averages, means over 5 seeds"
        ))
    });
}

// ---------------------------------------------------------------------
// Criterion 10 — identical invocations produce byte-identical metrics
// ---------------------------------------------------------------------

#[test]
fn criterion_10_determinism() {
    criterion(10, "determinism", || {
        let root = scratch("determinism");
        let _ = fs::remove_dir_all(&root);
        let run = |dir: PathBuf| -> Result<RunConfig, String> {
            let mut cfg = sweep_config(3.0, dir);
            cfg.rounds = 6;
            cfg.seeds = vec![0, 1];
            run_experiment(&cfg).map_err(|e| e.to_string())?;
            Ok(cfg)
        };
        let first = run(root.join("a"))?;
        let second = run(root.join("b"))?;

        let mut compared = 0usize;
        let mut bytes = 0usize;
        for seed in &first.seeds {
            for file in ["metrics.csv", "metrics.jsonl"] {
                let rel = format!("seed_{seed}/{file}");
                let a = fs::read(first.out_dir.join(&rel)).map_err(|e| e.to_string())?;
                let b = fs::read(second.out_dir.join(&rel)).map_err(|e| e.to_string())?;
                if a.is_empty() {
                    return Err(format!("{rel} is empty"));
                }
                if a != b {
                    return Err(format!("{rel} differs between identical invocations"));
                }
                compared += 1;
                bytes += a.len();
            }
        }
        let a = fs::read(first.out_dir.join("summary.csv")).map_err(|e| e.to_string())?;
        let b = fs::read(second.out_dir.join("summary.csv")).map_err(|e| e.to_string())?;
        if a != b {
            return Err("summary.csv differs between identical invocations".into());
        }
        compared += 1;
        bytes += a.len();
        Ok(format!(
            "two identical invocations produced byte-identical metrics \
             ({compared} files, {bytes} bytes compared)"
        ))
    });
}
