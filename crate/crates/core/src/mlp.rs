//! Dense feed-forward detector network trained with binary cross-entropy and
//! Adam.
//!
//! The detector shape for an `n × n` array is `n² → 4n² → 2n² → n²` with ReLU
//! hidden layers and a sigmoid output. Inputs are resistances multiplied by a
//! fixed normalizer (`1 / r0` by default).

mod dataset;
mod persist;

pub use dataset::{collect_instances, generate_dataset, ClassFilter, Dataset, DatasetSpec};

use crate::channel::ReadArray;
use crate::detect::SoftDetector;
use crate::seed::{self, Stream};
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input value")]
    NonFiniteInput,
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "only {accepted} of {requested} sneak-path-affected arrays found in {draws} draws \
         (budget {budget}); the operating point cannot supply the requested count"
    )]
    Starvation {
        requested: usize,
        accepted: usize,
        draws: usize,
        budget: usize,
    },
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Largest value below 1 and smallest positive value a sigmoid output may take.
const SIGMOID_HI: f64 = 1.0 - f64::EPSILON / 2.0;
const SIGMOID_LO: f64 = f64::MIN_POSITIVE;

#[inline]
pub fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    (1.0 / (1.0 + (-z).exp())).clamp(SIGMOID_LO, SIGMOID_HI)
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(relu),
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
        }
    }
}

/// One affine layer, `out = act(x · weights + bias)`. `weights` is
/// `inputs × outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Dense>,
    normalizer: f64,
}

/// Per-layer parameter gradients, same shapes as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpModel {
    /// Randomly initialized network: He-scaled normal weights for ReLU layers,
    /// Xavier-scaled for the sigmoid output layer, zero biases.
    pub fn new(dims: &[usize], normalizer: f64, seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least input and output widths");
        let mut rng = seed::rng_for(seed, 0, Stream::Init);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let (activation, std) = if k == last {
                    (Activation::Sigmoid, (2.0 / (fan_in + fan_out) as f64).sqrt())
                } else {
                    (Activation::Relu, (2.0 / fan_in as f64).sqrt())
                };
                let dist = Normal::new(0.0, std).unwrap();
                Dense {
                    weights: Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(&mut rng)),
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Self { layers, normalizer }
    }

    /// The `n² → 4n² → 2n² → n²` detector for an `n × n` array.
    pub fn detector(n: usize, normalizer: f64, seed: u64) -> Self {
        let k = n * n;
        Self::new(&[k, 4 * k, 2 * k, k], normalizer, seed)
    }

    /// All-zero parameters.
    pub fn zeros(dims: &[usize], normalizer: f64) -> Self {
        let mut m = Self::new(dims, normalizer, 0);
        for l in &mut m.layers {
            l.weights.fill(0.0);
        }
        m
    }

    pub fn from_layers(layers: Vec<Dense>, normalizer: f64) -> Self {
        for w in layers.windows(2) {
            assert_eq!(w[0].weights.ncols(), w[1].weights.nrows(), "layer widths do not chain");
        }
        for l in &layers {
            assert_eq!(l.weights.ncols(), l.bias.len(), "bias width mismatch");
        }
        Self { layers, normalizer }
    }

    /// Sets the first-layer biases so that an input equal to `mean` produces
    /// zero first-layer pre-activations.
    pub fn center_inputs(&mut self, mean: &[f64]) {
        let first = &mut self.layers[0];
        assert_eq!(mean.len(), first.weights.nrows(), "mean width mismatch");
        let m = ArrayView2::from_shape((1, mean.len()), mean).unwrap();
        first.bias = -m.dot(&first.weights).row(0).to_owned();
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Layer widths, input first.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].weights.nrows())
            .chain(self.layers.iter().map(|l| l.weights.ncols()))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Soft estimates for one already-normalized input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, MlpError> {
        if x.len() != self.input_dim() {
            return Err(MlpError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(MlpError::NonFiniteInput);
        }
        let view = ArrayView2::from_shape((1, x.len()), x).unwrap();
        Ok(self.forward_batch(view).into_raw_vec_and_offset().0)
    }

    /// Soft estimates for a `batch × input_dim` block of normalized inputs.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        for layer in &self.layers {
            let mut z = a.dot(&layer.weights);
            z += &layer.bias;
            layer.activation.apply(&mut z);
            a = z;
        }
        a
    }

    /// Pre-activations and activations of every layer; `acts[0]` is the input.
    fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for layer in &self.layers {
            let mut z = acts.last().unwrap().dot(&layer.weights);
            z += &layer.bias;
            layer.activation.apply(&mut z);
            acts.push(z);
        }
        acts
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MlpError> {
        std::fs::write(path, persist::to_bytes(self))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MlpError> {
        persist::from_bytes(&std::fs::read(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        persist::to_bytes(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MlpError> {
        persist::from_bytes(bytes)
    }
}

impl SoftDetector for MlpModel {
    fn soft_estimates(&self, reads: &ReadArray) -> Vec<f64> {
        let x: Vec<f64> = reads.values().iter().map(|r| r * self.normalizer).collect();
        let view = ArrayView2::from_shape((1, x.len()), &x).expect("read array shape");
        self.forward_batch(view).into_raw_vec_and_offset().0
    }

    fn input_len(&self) -> Option<usize> {
        Some(self.input_dim())
    }
}

/// Mean binary cross-entropy with predictions clamped to `[eps, 1 - eps]`.
pub fn bce_loss(pred: &[f64], labels: &[f64], eps: f64) -> f64 {
    assert_eq!(pred.len(), labels.len());
    let total: f64 = pred
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    total / pred.len() as f64
}

fn bce_batch(pred: &Array2<f64>, labels: ArrayView2<'_, f64>, eps: f64) -> f64 {
    let mut total = 0.0;
    Zip::from(pred).and(labels).for_each(|&p, &y| {
        let p = p.clamp(eps, 1.0 - eps);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    });
    total / pred.len() as f64
}

/// Loss and exact gradients of the mean BCE over every output of every sample
/// in the batch. The sigmoid/BCE pair contributes `(p - y) / (batch · outputs)`
/// at the output pre-activation; ReLU passes gradient only where its
/// pre-activation was strictly positive.
pub fn backward(model: &MlpModel, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, eps: f64) -> (f64, Gradients) {
    assert!(x.nrows() > 0, "empty batch");
    assert_eq!(x.nrows(), y.nrows());
    assert_eq!(y.ncols(), model.output_dim());
    let acts = model.forward_cached(x);
    let out = acts.last().unwrap();
    let loss = bce_batch(out, y, eps);

    let scale = 1.0 / out.len() as f64;
    let mut delta = (out - &y) * scale;
    let depth = model.layers.len();
    let mut weights = Vec::with_capacity(depth);
    let mut biases = Vec::with_capacity(depth);
    for k in (0..depth).rev() {
        let input = &acts[k];
        weights.push(input.t().dot(&delta));
        biases.push(delta.sum_axis(Axis(0)));
        if k > 0 {
            let mut back = delta.dot(&model.layers[k].weights.t());
            // acts[k] is the ReLU output of layer k-1: positive exactly where
            // the pre-activation was positive
            Zip::from(&mut back).and(&acts[k]).for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            delta = back;
        }
    }
    weights.reverse();
    biases.reverse();
    (loss, Gradients { weights, biases })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// Clamp applied to predictions inside the loss.
    pub bce_clamp: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults for an `n × n` array: mini-batches of `4n²` samples.
    pub fn for_array(n: usize) -> Self {
        Self {
            batch_size: 4 * n * n,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 30,
            bce_clamp: 1e-12,
            train_samples: 20_000,
            test_samples: 10_000,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        let bad = |m: &str| Err(MlpError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("Adam betas must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        if !(self.bce_clamp > 0.0 && self.bce_clamp < 0.5) {
            return bad("BCE clamp must lie in (0, 0.5)");
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        let zeros = Gradients {
            weights: model.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            biases: model.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        };
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(model: &mut MlpModel, grads: &Gradients, state: &mut AdamState, cfg: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps) = (cfg.learning_rate, cfg.epsilon);
    let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (k, layer) in model.layers.iter_mut().enumerate() {
        Zip::from(&mut layer.weights)
            .and(&grads.weights[k])
            .and(&mut state.m.weights[k])
            .and(&mut state.v.weights[k])
            .for_each(update);
        Zip::from(&mut layer.bias)
            .and(&grads.biases[k])
            .and(&mut state.m.biases[k])
            .and(&mut state.v.biases[k])
            .for_each(update);
    }
}

/// Per-step and per-epoch mean losses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub steps: Vec<f64>,
    pub epochs: Vec<f64>,
}

impl LossTrace {
    /// Exponential moving average of the step losses.
    pub fn smoothed(&self, alpha: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps.len());
        let mut acc = None;
        for &l in &self.steps {
            let v = match acc {
                None => l,
                Some(prev) => alpha * l + (1.0 - alpha) * prev,
            };
            acc = Some(v);
            out.push(v);
        }
        out
    }
}

/// Mini-batch Adam training. Sample order is reshuffled every epoch from the
/// configured seed, so a fixed seed reproduces the parameters exactly.
pub fn train(mut model: MlpModel, data: &Dataset, cfg: &TrainConfig) -> Result<(MlpModel, LossTrace), MlpError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(MlpError::EmptyDataset);
    }
    if data.inputs.ncols() != model.input_dim() || data.labels.ncols() != model.output_dim() {
        return Err(MlpError::DimensionMismatch {
            expected: model.input_dim(),
            got: data.inputs.ncols(),
        });
    }
    if data.inputs.iter().any(|v| !v.is_finite()) {
        return Err(MlpError::NonFiniteInput);
    }
    let mut state = AdamState::new(&model);
    let mut trace = LossTrace::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng_for(cfg.seed, epoch as u64, Stream::Shuffle));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let x = data.inputs.select(Axis(0), chunk);
            let y = data.labels.select(Axis(0), chunk);
            let (loss, grads) = backward(&model, x.view(), y.view(), cfg.bce_clamp);
            if !loss.is_finite() {
                return Err(MlpError::NonFiniteLoss { epoch, step, loss });
            }
            adam_step(&mut model, &grads, &mut state, cfg);
            trace.steps.push(loss);
            epoch_loss += loss;
            batches += 1;
            step += 1;
        }
        trace.epochs.push(epoch_loss / batches as f64);
    }
    Ok((model, trace))
}

/// Largest relative error between [`backward`] and central finite differences
/// of step `h`, over every weight and bias. The relative error of a pair
/// `(a, n)` is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(model: &MlpModel, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, eps: f64, h: f64, floor: f64) -> f64 {
    let (_, grads) = backward(model, x, y, eps);
    let loss_at = |m: &MlpModel| bce_batch(&m.forward_batch(x), y, eps);
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut compare = |analytic: f64, numeric: f64| {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        worst = worst.max(rel);
    };
    for k in 0..model.layers.len() {
        for idx in 0..model.layers[k].weights.len() {
            let (r, c) = (idx / model.layers[k].weights.ncols(), idx % model.layers[k].weights.ncols());
            let w0 = model.layers[k].weights[(r, c)];
            probe.layers[k].weights[(r, c)] = w0 + h;
            let up = loss_at(&probe);
            probe.layers[k].weights[(r, c)] = w0 - h;
            let down = loss_at(&probe);
            probe.layers[k].weights[(r, c)] = w0;
            compare(grads.weights[k][(r, c)], (up - down) / (2.0 * h));
        }
        for j in 0..model.layers[k].bias.len() {
            let b0 = model.layers[k].bias[j];
            probe.layers[k].bias[j] = b0 + h;
            let up = loss_at(&probe);
            probe.layers[k].bias[j] = b0 - h;
            let down = loss_at(&probe);
            probe.layers[k].bias[j] = b0;
            compare(grads.biases[k][j], (up - down) / (2.0 * h));
        }
    }
    worst
}

/// Mean BCE of the model over a dataset, evaluated in blocks.
pub fn evaluate_loss(model: &MlpModel, data: &Dataset, eps: f64) -> f64 {
    let mut total = 0.0;
    let block = 1024;
    let mut start = 0;
    while start < data.len() {
        let end = (start + block).min(data.len());
        let out = model.forward_batch(data.inputs.slice(s![start..end, ..]));
        total += bce_batch(&out, data.labels.slice(s![start..end, ..]), eps) * (end - start) as f64;
        start = end;
    }
    total / data.len() as f64
}
