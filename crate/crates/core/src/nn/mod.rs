//! Small fully differentiable feed-forward classifier.
//!
//! The model is a dense multilayer perceptron in fp64 with tanh hidden
//! activations and a linear output layer. Its parameter list is split at a
//! layer index `l` into a *front* part (producing the activations that clients
//! share) and a *back* part (producing logits). Exact gradients for the
//! composite training loss live in [`grad`], the Adam optimizer with per-round
//! learning-rate decay in [`adam`].
//!
//! Design notes:
//! - fp64 throughout; gradient correctness is contractually checked against
//!   central finite differences (see the gradient tests).
//! - Softmax is *not* applied by `forward_back`; downstream loss code applies
//!   a max-subtracted (stable) softmax.
//! - Shapes follow the row convention: a data matrix is (samples × dims) and a
//!   weight matrix is (out_dim × in_dim), so a layer computes
//!   `σ(x · Wᵀ + b)`.

mod adam;
mod grad;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use grad::{grad_mse, grad_total_loss, LossBreakdown};

use std::io::{Read as _, Write as _};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Tanh => z.mapv(f64::tanh),
            Activation::Identity => z,
        }
    }

    /// σ'(z) expressed through the layer *output* y = σ(z); for tanh this is
    /// 1 − y², which avoids keeping pre-activations around.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer: `y = σ(x · Wᵀ + b)` with W of shape (out_dim × in_dim).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::shape(
                "DenseLayer::new",
                format!("bias length {}", weights.nrows()),
                bias.len(),
            ));
        }
        Ok(DenseLayer { weights, bias, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Forward one layer for a (n × in_dim) input block.
    pub fn forward(&self, input: &Array2<f64>) -> Array2<f64> {
        debug_assert_eq!(input.ncols(), self.in_dim());
        let z = input.dot(&self.weights.t()) + &self.bias;
        self.activation.apply(z)
    }
}

/// Layered parameter set with a designated split index `l` separating the
/// front part (layers `[0, l)`, activation producer) from the back part
/// (layers `[l, L)`, logit producer).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<DenseLayer>,
    split_index: usize,
    num_classes: usize,
}

impl ModelParams {
    /// Build from explicit layers, validating the structural invariants:
    /// adjacent dimensions compatible, `1 ≤ split_index ≤ L−1`, all finite.
    pub fn new(layers: Vec<DenseLayer>, split_index: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(
                    format!("layer {} -> {}", i, i + 1),
                    format!("in_dim {}", pair[0].out_dim()),
                    format!("in_dim {}", pair[1].in_dim()),
                ));
            }
        }
        if split_index < 1 || split_index > layers.len() - 1 {
            return Err(Error::Config(format!(
                "split_index {} outside [1, {}]",
                split_index,
                layers.len() - 1
            )));
        }
        let num_classes = layers.last().unwrap().out_dim();
        let model = ModelParams { layers, split_index, num_classes };
        if !model.is_finite() {
            return Err(Error::numerical("ModelParams::new", "non-finite parameter"));
        }
        Ok(model)
    }

    /// Seeded Xavier-uniform initialization: tanh hidden layers, linear output.
    /// `widths` excludes input and output, e.g. `hidden = [32, 16]` gives
    /// layers `in→32→16→num_classes`.
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        split_index: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(num_classes);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights =
                Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-scale..scale));
            let bias = Array1::zeros(fan_out);
            let activation = if layers.len() + 1 < dims.len() - 1 {
                Activation::Tanh
            } else {
                Activation::Identity
            };
            layers.push(DenseLayer::new(weights, bias, activation)?);
        }
        ModelParams::new(layers, split_index)
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Width of the shared activations (output of the last front layer).
    pub fn feature_dim(&self) -> usize {
        self.layers[self.split_index - 1].out_dim()
    }

    pub fn front_layers(&self) -> &[DenseLayer] {
        &self.layers[..self.split_index]
    }

    pub fn back_layers(&self) -> &[DenseLayer] {
        &self.layers[self.split_index..]
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Activations of layer `l` for every input row (the shareable features).
    pub fn forward_front(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::shape(
                "forward_front",
                format!("input width {}", self.input_dim()),
                inputs.ncols(),
            ));
        }
        let mut x = inputs.to_owned();
        for layer in self.front_layers() {
            x = layer.forward(&x);
        }
        Ok(x)
    }

    /// Logits from layer-`l` activations. Softmax is NOT applied here.
    pub fn forward_back(&self, activations: &Array2<f64>) -> Result<Array2<f64>> {
        if activations.ncols() != self.feature_dim() {
            return Err(Error::shape(
                "forward_back",
                format!("activation width {}", self.feature_dim()),
                activations.ncols(),
            ));
        }
        let mut x = activations.to_owned();
        for layer in self.back_layers() {
            x = layer.forward(&x);
        }
        Ok(x)
    }

    /// Full forward pass; identical to `forward_back(forward_front(x))`.
    pub fn forward(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        let f = self.forward_front(inputs)?;
        self.forward_back(&f)
    }

    /// Flatten all parameters (per layer: row-major weights, then bias).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend(layer.weights.iter().copied());
            out.extend(layer.bias.iter().copied());
        }
        out
    }

    /// Shape header describing the flat parameter array.
    pub fn header(&self) -> ModelHeader {
        ModelHeader {
            layer_dims: self.layers.iter().map(|l| (l.out_dim(), l.in_dim())).collect(),
            activations: self.layers.iter().map(|l| l.activation).collect(),
            split_index: self.split_index,
            num_classes: self.num_classes,
        }
    }

    /// Rebuild a model from a shape header and a flat parameter array.
    pub fn from_flat(header: &ModelHeader, flat: &[f64]) -> Result<Self> {
        let expected: usize = header
            .layer_dims
            .iter()
            .map(|&(o, i)| o * i + o)
            .sum();
        if flat.len() != expected {
            return Err(Error::shape("ModelParams::from_flat", expected, flat.len()));
        }
        if header.activations.len() != header.layer_dims.len() {
            return Err(Error::shape(
                "ModelParams::from_flat activations",
                header.layer_dims.len(),
                header.activations.len(),
            ));
        }
        let mut layers = Vec::with_capacity(header.layer_dims.len());
        let mut cursor = 0;
        for (idx, &(o, i)) in header.layer_dims.iter().enumerate() {
            let w = Array2::from_shape_vec((o, i), flat[cursor..cursor + o * i].to_vec())
                .expect("sized above");
            cursor += o * i;
            let b = Array1::from_vec(flat[cursor..cursor + o].to_vec());
            cursor += o;
            layers.push(DenseLayer::new(w, b, header.activations[idx])?);
        }
        ModelParams::new(layers, header.split_index)
    }

    /// Write the model as a JSON shape header plus a flat little-endian fp64
    /// parameter array.
    pub fn save(&self, json_path: &Path, bin_path: &Path) -> Result<()> {
        let header = self.header();
        let file = std::fs::File::create(json_path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &header)?;
        write_f64_le(bin_path, &self.to_flat())
    }

    /// Inverse of [`ModelParams::save`]; bit-exact round trip.
    pub fn load(json_path: &Path, bin_path: &Path) -> Result<Self> {
        let file = std::fs::File::open(json_path)?;
        let header: ModelHeader = serde_json::from_reader(std::io::BufReader::new(file))?;
        let flat = read_f64_le(bin_path)?;
        ModelParams::from_flat(&header, &flat)
    }
}

/// JSON-serializable description of the flat parameter layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelHeader {
    /// (out_dim, in_dim) per layer.
    pub layer_dims: Vec<(usize, usize)>,
    pub activations: Vec<Activation>,
    pub split_index: usize,
    pub num_classes: usize,
}

/// Write an fp64 slice as little-endian bytes.
pub fn write_f64_le(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Read a little-endian fp64 array written by [`write_f64_le`].
pub fn read_f64_le(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "{}: length {} not a multiple of 8",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// A training mini-batch: inputs (n × dims) and soft labels (n × C, rows
/// non-negative summing to 1).
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub labels: Array2<f64>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, labels: Array2<f64>) -> Result<Self> {
        if inputs.nrows() != labels.nrows() {
            return Err(Error::shape(
                "Batch::new rows",
                inputs.nrows(),
                labels.nrows(),
            ));
        }
        for (i, row) in labels.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&v| v < 0.0) {
                return Err(Error::numerical(
                    "Batch::new labels",
                    format!("row {i} is not a distribution (sum {sum})"),
                ));
            }
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parameter-shaped gradient (or moment) container.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &ModelParams) -> Self {
        Gradients {
            weights: model
                .layers
                .iter()
                .map(|l| Array2::zeros((l.out_dim(), l.in_dim())))
                .collect(),
            biases: model.layers.iter().map(|l| Array1::zeros(l.out_dim())).collect(),
        }
    }

    pub fn shape_matches(&self, model: &ModelParams) -> bool {
        self.weights.len() == model.layers.len()
            && self.biases.len() == model.layers.len()
            && model.layers.iter().enumerate().all(|(i, l)| {
                self.weights[i].dim() == l.weights.dim() && self.biases[i].len() == l.bias.len()
            })
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// `self += c * other`, used e.g. for proximal-penalty gradients.
    pub fn scaled_add(&mut self, c: f64, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(c, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(c, b);
        }
    }

    /// Flatten in the same order as [`ModelParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

/// Row-wise stable softmax (max subtraction before exponentiation).
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row-wise stable log-softmax: `z − max − ln Σ exp(z − max)`.
pub fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - max - log_sum);
    }
    out
}

/// One-hot encode integer class labels into an (n × C) matrix.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.len(), num_classes));
    for (i, &c) in labels.iter().enumerate() {
        assert!(c < num_classes, "label {c} out of range for C={num_classes}");
        out[[i, c]] = 1.0;
    }
    out
}

/// Column-stack helper used by forward/backward passes in tests and probes.
pub fn sum_rows(m: &Array2<f64>) -> Array1<f64> {
    m.sum_axis(Axis(0))
}
