//! Feed-forward classifier with two output logits (bona fide, spoof),
//! class-weighted cross-entropy and hand-written reverse-mode gradients.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::tensor::{ParamLayout, ParamVector, Tensor};

/// Number of output logits.
pub const N_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Parse(format!("unknown activation `{other}`"))),
        }
    }
}

/// Per-class multipliers of the cross-entropy, indexed by label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub bona_fide: f64,
    pub spoof: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self {
            bona_fide: 0.9,
            spoof: 0.1,
        }
    }
}

impl ClassWeights {
    pub fn new(bona_fide: f64, spoof: f64) -> Result<Self> {
        let w = Self { bona_fide, spoof };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bona_fide > 0.0 && self.spoof > 0.0) || !self.bona_fide.is_finite() || !self.spoof.is_finite() {
            return Err(Error::Config(format!(
                "class weights must be positive and finite, got ({}, {})",
                self.bona_fide, self.spoof
            )));
        }
        Ok(())
    }

    pub fn get(&self, label: usize) -> f64 {
        if label == 0 {
            self.bona_fide
        } else {
            self.spoof
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            bona_fide: a * self.bona_fide,
            spoof: a * self.spoof,
        }
    }
}

/// Architecture without weights: layer widths and hidden activation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        let s = Self { layer_dims, activation };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::Config("an MLP needs at least input and output dims".into()));
        }
        if let Some(i) = self.layer_dims.iter().position(|&d| d == 0) {
            return Err(Error::Config(format!("layer dim {i} is zero")));
        }
        if *self.layer_dims.last().unwrap() != N_CLASSES {
            return Err(Error::Config(format!(
                "output dim must be {N_CLASSES}, got {}",
                self.layer_dims.last().unwrap()
            )));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// Weight block `layer{l}.weight` is (out, in) row-major, followed by
    /// `layer{l}.bias`.
    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.layer_dims.windows(2).enumerate().flat_map(|(l, w)| {
            [
                (format!("layer{l}.weight"), vec![w[1], w[0]]),
                (format!("layer{l}.bias"), vec![w[1]]),
            ]
        }))
    }
}

/// MLP classifier: architecture plus its parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    spec: MlpSpec,
    params: ParamVector,
}

/// Per-layer values kept for the backward pass.
struct Trace {
    /// Inputs to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl MlpModel {
    /// Uniform initialization in ±sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = Arc::new(spec.layout());
        let mut params = ParamVector::zeros(Arc::clone(&layout));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for entry in layout.entries().iter().filter(|e| e.shape.len() == 2) {
            let (fan_out, fan_in) = (entry.shape[0], entry.shape[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in params.block_mut(entry) {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let params = ParamVector::zeros(Arc::new(spec.layout()));
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        if params.layout().as_ref() != &spec.layout() {
            return Err(Error::Layout("parameter layout does not match architecture".into()));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.spec.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.spec.activation
    }

    /// Replaces the parameters. The layout must match.
    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.params.check_compatible(&params)?;
        self.params = params;
        Ok(())
    }

    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        let mut m = self.clone();
        m.set_params(params)?;
        Ok(m)
    }

    /// Short content hash of the parameters, used as a model identifier.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for d in &self.spec.layer_dims {
            h.update((*d as u64).to_le_bytes());
        }
        h.update(self.spec.activation.to_string().as_bytes());
        for v in self.params.values() {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Logits for every row of the batch, shape (m, 2).
    pub fn forward(&self, batch: &Batch) -> Result<Tensor> {
        forward_with(&self.spec, &self.params, batch.features())
    }

    /// Mean weighted cross-entropy and its gradient at the model's weights.
    pub fn loss_and_grad(&self, batch: &Batch, weights: ClassWeights) -> Result<(f64, ParamVector)> {
        loss_and_grad_with(&self.spec, &self.params, batch, weights)
    }

    pub fn loss(&self, batch: &Batch, weights: ClassWeights) -> Result<f64> {
        let logits = self.forward(batch)?;
        weighted_cross_entropy(&logits, batch.labels(), weights).map(|(l, _)| l)
    }

    /// Detection score per row: bona fide logit minus spoof logit.
    pub fn scores(&self, batch: &Batch) -> Result<Vec<f64>> {
        let logits = self.forward(batch)?;
        Ok((0..logits.rows())
            .map(|i| {
                let r = logits.row(i);
                r[0] - r[1]
            })
            .collect())
    }
}

fn check_input(spec: &MlpSpec, params: &ParamVector, x: &Tensor) -> Result<()> {
    if params.len() != spec.layout().len() {
        return Err(Error::Layout(format!(
            "architecture needs {} parameters, got {}",
            spec.layout().len(),
            params.len()
        )));
    }
    if x.shape().len() != 2 || x.cols() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "layer 0 expects input dim {}, batch has shape {:?}",
            spec.input_dim(),
            x.shape()
        )));
    }
    Ok(())
}

fn run_forward(spec: &MlpSpec, params: &ParamVector, x: &Tensor) -> Result<Trace> {
    check_input(spec, params, x)?;
    let m = x.rows();
    let entries = params.layout().entries();
    let n_layers = spec.n_layers();
    let mut inputs = vec![x.data().to_vec()];
    let mut pre = Vec::with_capacity(n_layers - 1);
    let mut logits = Vec::new();
    for l in 0..n_layers {
        let (din, dout) = (spec.layer_dims[l], spec.layer_dims[l + 1]);
        let w = params.block(&entries[2 * l]);
        let b = params.block(&entries[2 * l + 1]);
        let a = inputs.last().unwrap();
        let mut z = vec![0.0; m * dout];
        for i in 0..m {
            let row = &a[i * din..(i + 1) * din];
            for o in 0..dout {
                let wr = &w[o * din..(o + 1) * din];
                let mut s = b[o];
                for k in 0..din {
                    s += wr[k] * row[k];
                }
                z[i * dout + o] = s;
            }
        }
        if l + 1 == n_layers {
            logits = z;
        } else {
            let act: Vec<f64> = z.iter().map(|&v| spec.activation.apply(v)).collect();
            pre.push(z);
            inputs.push(act);
        }
    }
    Ok(Trace { inputs, pre, logits })
}

/// Logits of an architecture evaluated at arbitrary parameters.
pub fn forward_with(spec: &MlpSpec, params: &ParamVector, x: &Tensor) -> Result<Tensor> {
    let trace = run_forward(spec, params, x)?;
    Ok(Tensor::from_raw(vec![x.rows(), N_CLASSES], trace.logits))
}

/// Class-weighted softmax cross-entropy.
///
/// `per_example[i] = w[y_i] * -log softmax(logits_i)[y_i]` and the loss is
/// the plain mean of `per_example`.
pub fn weighted_cross_entropy(logits: &Tensor, labels: &[usize], weights: ClassWeights) -> Result<(f64, Vec<f64>)> {
    weights.validate()?;
    if labels.is_empty() {
        return Err(Error::Empty("cross-entropy over an empty batch".into()));
    }
    if logits.rows() != labels.len() || logits.cols() != N_CLASSES {
        return Err(Error::Shape(format!(
            "logits shape {:?} does not match {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    if let Some(i) = logits.first_non_finite() {
        return Err(Error::NonFinite(format!(
            "logit {} of row {} is {}",
            i % N_CLASSES,
            i / N_CLASSES,
            logits.data()[i]
        )));
    }
    let per_example: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| weights.get(y) * nll(logits.row(i), y))
        .collect();
    let mean = per_example.iter().sum::<f64>() / labels.len() as f64;
    Ok((mean, per_example))
}

/// `-log softmax(z)[y]` through log-sum-exp.
fn nll(z: &[f64], y: usize) -> f64 {
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
    (lse - z[y]).max(0.0)
}

/// Mean weighted cross-entropy and its exact gradient with respect to every
/// parameter of the architecture.
pub fn loss_and_grad_with(
    spec: &MlpSpec,
    params: &ParamVector,
    batch: &Batch,
    weights: ClassWeights,
) -> Result<(f64, ParamVector)> {
    let trace = run_forward(spec, params, batch.features())?;
    let m = batch.len();
    let logits = Tensor::from_raw(vec![m, N_CLASSES], trace.logits);
    let (loss, _) = weighted_cross_entropy(&logits, batch.labels(), weights)?;

    // dL/dlogits = w_y (softmax - onehot) / m
    let mut delta = vec![0.0; m * N_CLASSES];
    for (i, &y) in batch.labels().iter().enumerate() {
        let z = logits.row(i);
        let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        let scale = weights.get(y) / m as f64;
        for c in 0..N_CLASSES {
            let target = if c == y { 1.0 } else { 0.0 };
            delta[i * N_CLASSES + c] = scale * (e[c] / s - target);
        }
    }

    let mut grad = ParamVector::zeros(std::sync::Arc::clone(params.layout()));
    let entries = params.layout().entries().to_vec();
    for l in (0..spec.n_layers()).rev() {
        let (din, dout) = (spec.layer_dims[l], spec.layer_dims[l + 1]);
        let a = &trace.inputs[l];
        {
            let gw = grad.block_mut(&entries[2 * l]);
            for i in 0..m {
                let row = &a[i * din..(i + 1) * din];
                for o in 0..dout {
                    let d = delta[i * dout + o];
                    if d != 0.0 {
                        let g = &mut gw[o * din..(o + 1) * din];
                        for k in 0..din {
                            g[k] += d * row[k];
                        }
                    }
                }
            }
        }
        {
            let gb = grad.block_mut(&entries[2 * l + 1]);
            for i in 0..m {
                for o in 0..dout {
                    gb[o] += delta[i * dout + o];
                }
            }
        }
        if l > 0 {
            let w = params.block(&entries[2 * l]);
            let z = &trace.pre[l - 1];
            let mut prev = vec![0.0; m * din];
            for i in 0..m {
                for o in 0..dout {
                    let d = delta[i * dout + o];
                    if d != 0.0 {
                        let wr = &w[o * din..(o + 1) * din];
                        for k in 0..din {
                            prev[i * din + k] += d * wr[k];
                        }
                    }
                }
                for k in 0..din {
                    let idx = i * din + k;
                    prev[idx] *= spec.activation.derivative(z[idx], a[idx]);
                }
            }
            delta = prev;
        }
    }
    Ok((loss, grad))
}

/// Mean weighted cross-entropy of one batch viewed as a function of the
/// parameters.
#[derive(Debug, Clone, Copy)]
pub struct BatchObjective<'a> {
    pub spec: &'a MlpSpec,
    pub batch: &'a Batch,
    pub weights: ClassWeights,
}

impl<'a> BatchObjective<'a> {
    pub fn new(model: &'a MlpModel, batch: &'a Batch, weights: ClassWeights) -> Self {
        Self {
            spec: model.spec(),
            batch,
            weights,
        }
    }
}

impl Objective for BatchObjective<'_> {
    fn loss(&self, w: &ParamVector) -> Result<f64> {
        let logits = forward_with(self.spec, w, self.batch.features())?;
        weighted_cross_entropy(&logits, self.batch.labels(), self.weights).map(|(l, _)| l)
    }

    fn loss_and_grad(&self, w: &ParamVector) -> Result<(f64, ParamVector)> {
        loss_and_grad_with(self.spec, w, self.batch, self.weights)
    }
}
