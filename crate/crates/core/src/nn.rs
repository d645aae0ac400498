//! Dense neural network with hand-written gradients.
//!
//! Parameters live in one flat [`ParamVector`]. The layout is layer-major:
//! for each dense layer the weight matrix (row-major, `out x in`) comes first,
//! then the bias vector. The output layer feeds a log-softmax and the loss is
//! the mean negative log-likelihood of the true class.

use std::io::{Read, Write};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{input, Error, Result};
use crate::rng::{stream_from, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
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

/// Architecture of a dense classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
}

impl ModelSpec {
    /// `layer_sizes` is `[input, hidden..., classes]`; one activation per hidden layer.
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(input("a model needs at least an input and an output layer"));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(input("layer sizes must be positive"));
        }
        if activations.len() != layer_sizes.len() - 2 {
            return Err(input(format!(
                "expected {} hidden activations, got {}",
                layer_sizes.len() - 2,
                activations.len()
            )));
        }
        Ok(Self {
            layer_sizes,
            activations,
        })
    }

    /// Same activation on every hidden layer.
    pub fn dense(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        let hidden = layer_sizes.len().saturating_sub(2);
        Self::new(layer_sizes, vec![activation; hidden])
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    fn layer_count(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Offsets of `(weights, biases)` of dense layer `l` inside a parameter vector.
    fn layer_ranges(&self, l: usize) -> (Range<usize>, Range<usize>) {
        let mut off = 0;
        for w in self.layer_sizes.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let w_end = off + fan_in * fan_out;
        (off..w_end, w_end..w_end + fan_out)
    }

    /// Weights and biases of the output layer.
    pub fn last_layer_range(&self) -> Range<usize> {
        let (w, b) = self.layer_ranges(self.layer_count() - 1);
        w.start..b.end
    }
}

/// Flat vector of every model parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

/// Gradients share the parameter layout.
pub type Gradient = ParamVector;

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Elementwise negation.
    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) -> Result<()> {
        check_len(self, other)?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Length-prefixed little-endian encoding: `u64` count then `f64` values.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(&(self.0.len() as u64).to_le_bytes())?;
        for v in &self.0 {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(8 + 8 * self.0.len());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut src: R) -> Result<Self> {
        let mut word = [0u8; 8];
        src.read_exact(&mut word).map_err(|_| Error::Format {
            offset: 0,
            message: "missing length header".into(),
        })?;
        let len = u64::from_le_bytes(word) as usize;
        let mut values = Vec::with_capacity(len.min(1 << 24));
        for i in 0..len {
            src.read_exact(&mut word).map_err(|_| Error::Format {
                offset: 8 + 8 * i as u64,
                message: format!("truncated parameter vector, expected {len} values"),
            })?;
            values.push(f64::from_le_bytes(word));
        }
        Ok(Self(values))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

fn check_len(a: &ParamVector, b: &ParamVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(input(format!(
            "parameter length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn param_dot(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    check_len(a, b)?;
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum())
}

/// Euclidean distance.
pub fn param_dist(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    check_len(a, b)?;
    Ok(a.0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
pub fn init_model(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = stream_from(seed);
    let mut values = vec![0.0; spec.param_count()];
    for l in 0..spec.layer_count() {
        let (w, _) = spec.layer_ranges(l);
        let bound = 1.0 / (spec.layer_sizes[l] as f64).sqrt();
        for v in &mut values[w] {
            *v = rng.random_range(-bound..=bound);
        }
    }
    ParamVector(values)
}

/// Scratch buffers for one forward/backward pass.
struct Workspace {
    /// Pre-activations per layer (index 0 unused).
    z: Vec<Vec<f64>>,
    /// Activations per layer; index 0 is the input.
    a: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(spec: &ModelSpec) -> Self {
        let mk = || spec.layer_sizes.iter().map(|&s| vec![0.0; s]).collect();
        Self {
            z: mk(),
            a: mk(),
            delta: mk(),
        }
    }
}

fn forward(spec: &ModelSpec, w: &[f64], x: &[f64], ws: &mut Workspace) {
    ws.a[0].copy_from_slice(x);
    let last = spec.layer_count() - 1;
    for l in 0..spec.layer_count() {
        let (wr, br) = spec.layer_ranges(l);
        let fan_in = spec.layer_sizes[l];
        let weights = &w[wr];
        let biases = &w[br];
        let (prev, next) = ws.a.split_at_mut(l + 1);
        let input = &prev[l];
        let z = &mut ws.z[l + 1];
        for (j, zj) in z.iter_mut().enumerate() {
            let row = &weights[j * fan_in..(j + 1) * fan_in];
            *zj = biases[j] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
        }
        let out = &mut next[0];
        if l == last {
            out.copy_from_slice(z);
        } else {
            let act = spec.activations[l];
            for (o, &zj) in out.iter_mut().zip(z.iter()) {
                *o = act.apply(zj);
            }
        }
    }
}

/// Stable log-softmax in place; returns nothing, `logits` becomes log-probabilities.
fn log_softmax(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in logits {
        *v -= lse;
    }
}

fn check_batch(spec: &ModelSpec, w: &ParamVector, data: &Dataset, idx: &[usize]) -> Result<()> {
    if w.len() != spec.param_count() {
        return Err(input(format!(
            "model expects {} parameters, got {}",
            spec.param_count(),
            w.len()
        )));
    }
    if data.dim() != spec.input_dim() {
        return Err(input(format!(
            "feature dimension {} does not match model input {}",
            data.dim(),
            spec.input_dim()
        )));
    }
    if idx.is_empty() {
        return Err(input("empty batch"));
    }
    if let Some(&y) = idx
        .iter()
        .map(|&i| &data.labels()[i])
        .find(|&&y| y >= spec.class_count())
    {
        return Err(input(format!(
            "label {y} outside the model's {} classes",
            spec.class_count()
        )));
    }
    Ok(())
}

/// Mean NLL and its exact gradient over the samples `idx` of `data`.
pub fn loss_and_grad_indexed(
    spec: &ModelSpec,
    w: &ParamVector,
    data: &Dataset,
    idx: &[usize],
) -> Result<(f64, Gradient)> {
    check_batch(spec, w, data, idx)?;
    let mut ws = Workspace::new(spec);
    let mut grad = vec![0.0; w.len()];
    let mut loss = 0.0;
    let last = spec.layer_count();
    for &i in idx {
        forward(spec, &w.0, data.row(i), &mut ws);
        let y = data.labels()[i];
        let logp = &mut ws.a[last];
        log_softmax(logp);
        loss -= logp[y];
        for (k, d) in ws.delta[last].iter_mut().enumerate() {
            *d = logp[k].exp() - if k == y { 1.0 } else { 0.0 };
        }
        for l in (0..spec.layer_count()).rev() {
            let (wr, br) = spec.layer_ranges(l);
            let fan_in = spec.layer_sizes[l];
            let (lower, upper) = ws.delta.split_at_mut(l + 1);
            let delta = &upper[0];
            let input = &ws.a[l];
            for (j, &dj) in delta.iter().enumerate() {
                if dj == 0.0 {
                    continue;
                }
                let g_row = &mut grad[wr.start + j * fan_in..wr.start + (j + 1) * fan_in];
                for (g, &a) in g_row.iter_mut().zip(input) {
                    *g += dj * a;
                }
                grad[br.start + j] += dj;
            }
            if l > 0 {
                let weights = &w.0[wr];
                let prev = &mut lower[l];
                prev.iter_mut().for_each(|v| *v = 0.0);
                for (j, &dj) in delta.iter().enumerate() {
                    if dj == 0.0 {
                        continue;
                    }
                    let row = &weights[j * fan_in..(j + 1) * fan_in];
                    for (p, &wk) in prev.iter_mut().zip(row) {
                        *p += dj * wk;
                    }
                }
                let act = spec.activations[l - 1];
                for ((p, &z), &a) in prev.iter_mut().zip(&ws.z[l]).zip(&ws.a[l]) {
                    *p *= act.derivative(z, a);
                }
            }
        }
    }
    let n = idx.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, ParamVector(grad)))
}

/// Mean NLL and gradient over a whole batch.
pub fn loss_and_grad(spec: &ModelSpec, w: &ParamVector, batch: &Dataset) -> Result<(f64, Gradient)> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    loss_and_grad_indexed(spec, w, batch, &idx)
}

/// Mean NLL without the gradient.
pub fn loss(spec: &ModelSpec, w: &ParamVector, data: &Dataset) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    check_batch(spec, w, data, &idx)?;
    let mut ws = Workspace::new(spec);
    let last = spec.layer_count();
    let mut total = 0.0;
    for i in idx {
        forward(spec, &w.0, data.row(i), &mut ws);
        log_softmax(&mut ws.a[last]);
        total -= ws.a[last][data.labels()[i]];
    }
    Ok(total / data.len() as f64)
}

/// Argmax class of every sample.
pub fn predict(spec: &ModelSpec, w: &ParamVector, data: &Dataset) -> Result<Vec<usize>> {
    if data.dim() != spec.input_dim() || w.len() != spec.param_count() {
        return Err(input("model and data dimensions disagree"));
    }
    let mut ws = Workspace::new(spec);
    let last = spec.layer_count();
    Ok((0..data.len())
        .map(|i| {
            forward(spec, &w.0, data.row(i), &mut ws);
            argmax(&ws.a[last])
        })
        .collect())
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// Hyperparameters of local mini-batch SGD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdParams {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl SgdParams {
    fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(input("learning rate must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(input("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Shuffled mini-batches for one epoch.
fn epoch_batches(n: usize, batch_size: usize, rng: &mut Stream) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Mini-batch SGD starting from `w0`, reshuffling every epoch.
pub fn train_local(
    spec: &ModelSpec,
    w0: &ParamVector,
    data: &Dataset,
    sgd: SgdParams,
    rng: &mut Stream,
) -> Result<ParamVector> {
    sgd.validate()?;
    if data.is_empty() {
        return Err(input("cannot train on an empty dataset"));
    }
    let mut w = w0.clone();
    for _ in 0..sgd.epochs {
        for batch in epoch_batches(data.len(), sgd.batch_size, rng) {
            let (_, g) = loss_and_grad_indexed(spec, &w, data, &batch)?;
            w.axpy(-sgd.lr, &g)?;
        }
    }
    Ok(w)
}

/// Plain SGD over a fixed, ordered list of batches (no shuffling).
pub fn train_schedule(
    spec: &ModelSpec,
    w0: &ParamVector,
    data: &Dataset,
    schedule: &[Vec<usize>],
    lr: f64,
) -> Result<ParamVector> {
    let mut w = w0.clone();
    for batch in schedule {
        let (_, g) = loss_and_grad_indexed(spec, &w, data, batch)?;
        w.axpy(-lr, &g)?;
    }
    Ok(w)
}

/// Coupling strengths of the elastic update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Elastic {
    pub alpha: f64,
    pub beta: f64,
}

/// One elastic step.
///
/// `w' = (1-alpha) w - lr g + alpha w_hat` and
/// `w_hat' = (1-beta) w_hat - lr g + beta w_bar`, where `w_bar` is the last
/// broadcast global model.
pub fn esgd_step(
    w: &ParamVector,
    w_hat: &ParamVector,
    w_bar: &ParamVector,
    g: &Gradient,
    elastic: Elastic,
    lr: f64,
) -> Result<(ParamVector, ParamVector)> {
    check_len(w, w_hat)?;
    check_len(w, w_bar)?;
    check_len(w, g)?;
    let Elastic { alpha, beta } = elastic;
    if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&beta) {
        return Err(input("elastic coefficients must lie in [0, 1]"));
    }
    let pull = |x: &[f64], anchor: &[f64], c: f64| -> ParamVector {
        ParamVector(
            x.iter()
                .zip(anchor)
                .zip(&g.0)
                .map(|((&xi, &ai), &gi)| {
                    // c == 0 must reproduce plain SGD bit-for-bit
                    if c == 0.0 {
                        xi - lr * gi
                    } else {
                        (1.0 - c) * xi - lr * gi + c * ai
                    }
                })
                .collect(),
        )
    };
    Ok((pull(&w.0, &w_hat.0, alpha), pull(&w_hat.0, &w_bar.0, beta)))
}

/// Local training with elastic steps. Returns the fast weights and the updated anchor.
pub fn train_local_esgd(
    spec: &ModelSpec,
    w0: &ParamVector,
    anchor: &ParamVector,
    w_bar: &ParamVector,
    data: &Dataset,
    sgd: SgdParams,
    elastic: Elastic,
    rng: &mut Stream,
) -> Result<(ParamVector, ParamVector)> {
    sgd.validate()?;
    if data.is_empty() {
        return Err(input("cannot train on an empty dataset"));
    }
    let mut w = w0.clone();
    let mut w_hat = anchor.clone();
    for _ in 0..sgd.epochs {
        for batch in epoch_batches(data.len(), sgd.batch_size, rng) {
            let (_, g) = loss_and_grad_indexed(spec, &w, data, &batch)?;
            (w, w_hat) = esgd_step(&w, &w_hat, w_bar, &g, elastic, sgd.lr)?;
        }
    }
    Ok((w, w_hat))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_data() -> Dataset {
        Dataset::new(vec![0.2, 0.9, 0.7, 0.1, 0.5, 0.5], 2, vec![0, 1, 1], 2).unwrap()
    }

    #[test]
    fn parameter_count_matches_layout() {
        let spec = ModelSpec::dense(vec![4, 3, 2], Activation::Relu).unwrap();
        assert_eq!(spec.param_count(), 4 * 3 + 3 + 3 * 2 + 2);
        assert_eq!(init_model(&spec, 1).len(), 23);
        assert_eq!(spec.last_layer_range(), 15..23);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let spec = ModelSpec::dense(vec![2, 2], Activation::Relu).unwrap();
        assert_eq!(init_model(&spec, 7), init_model(&spec, 7));
        assert_ne!(init_model(&spec, 7), init_model(&spec, 8));
        let w = init_model(&spec, 7);
        let bound = 1.0 / 2f64.sqrt();
        assert!(w.as_slice()[..4].iter().all(|v| v.abs() <= bound));
        assert!(w.as_slice()[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ModelSpec::dense(vec![3], Activation::Relu).is_err());
        assert!(ModelSpec::new(vec![3, 4, 2], vec![]).is_err());
        assert!(ModelSpec::dense(vec![3, 0, 2], Activation::Tanh).is_err());
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        for classes in [2usize, 3, 10] {
            let spec = ModelSpec::dense(vec![2, classes], Activation::Relu).unwrap();
            let w = ParamVector::zeros(spec.param_count());
            let data = Dataset::new(vec![0.3, 0.4], 2, vec![1], classes).unwrap();
            let (l, _) = loss_and_grad(&spec, &w, &data).unwrap();
            assert!((l - (classes as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_batch_is_invariant() {
        let spec = ModelSpec::dense(vec![2, 3, 2], Activation::Tanh).unwrap();
        let w = init_model(&spec, 3);
        let data = tiny_data();
        let doubled = data.subset(&[0, 1, 2, 0, 1, 2]);
        let (l1, g1) = loss_and_grad(&spec, &w, &data).unwrap();
        let (l2, g2) = loss_and_grad(&spec, &w, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_input_error() {
        let spec = ModelSpec::dense(vec![3, 2], Activation::Relu).unwrap();
        let w = init_model(&spec, 0);
        assert!(matches!(loss_and_grad(&spec, &w, &tiny_data()), Err(Error::Input(_))));
    }

    #[test]
    fn zero_lr_returns_input() {
        let spec = ModelSpec::dense(vec![2, 4, 2], Activation::Relu).unwrap();
        let w0 = init_model(&spec, 5);
        let sgd = SgdParams { epochs: 3, lr: 0.0, batch_size: 2 };
        let w = train_local(&spec, &w0, &tiny_data(), sgd, &mut stream_from(1)).unwrap();
        assert_eq!(w, w0);
    }

    #[test]
    fn full_batch_epoch_is_one_gradient_step() {
        let spec = ModelSpec::dense(vec![2, 4, 2], Activation::Tanh).unwrap();
        let w0 = init_model(&spec, 5);
        let data = tiny_data();
        let sgd = SgdParams { epochs: 1, lr: 0.3, batch_size: data.len() };
        let w = train_local(&spec, &w0, &data, sgd, &mut stream_from(9)).unwrap();
        let (_, g) = loss_and_grad(&spec, &w0, &data).unwrap();
        for ((wi, w0i), gi) in w.as_slice().iter().zip(w0.as_slice()).zip(g.as_slice()) {
            assert!((wi - (w0i - 0.3 * gi)).abs() < 1e-14);
        }
    }

    #[test]
    fn esgd_reduces_to_sgd_and_pulls() {
        let w = ParamVector::new(vec![2.0]);
        let wh = ParamVector::new(vec![1.0]);
        let wb = ParamVector::new(vec![0.0]);
        let g = ParamVector::new(vec![1.0]);
        let (w1, wh1) = esgd_step(&w, &wh, &wb, &g, Elastic { alpha: 0.5, beta: 0.5 }, 0.1).unwrap();
        assert!((w1.as_slice()[0] - 1.4).abs() < 1e-15);
        assert!((wh1.as_slice()[0] - 0.4).abs() < 1e-15);

        let (w2, wh2) = esgd_step(&w, &wh, &wb, &g, Elastic { alpha: 0.0, beta: 0.0 }, 0.1).unwrap();
        assert_eq!(w2.as_slice()[0], 2.0 - 0.1);
        assert_eq!(wh2.as_slice()[0], 1.0 - 0.1);

        let (w3, _) = esgd_step(&w, &wh, &wb, &g, Elastic { alpha: 1.0, beta: 0.3 }, 0.0).unwrap();
        assert_eq!(w3, wh);

        let short = ParamVector::new(vec![]);
        assert!(esgd_step(&w, &short, &wb, &g, Elastic { alpha: 0.0, beta: 0.0 }, 0.1).is_err());
    }

    #[test]
    fn dot_and_dist() {
        let a = ParamVector::new(vec![1.0, 2.0]);
        let b = ParamVector::new(vec![3.0, 4.0]);
        assert_eq!(param_dot(&a, &b).unwrap(), 11.0);
        assert_eq!(param_dist(&a, &a).unwrap(), 0.0);
        assert_eq!(param_dist(&ParamVector::zeros(2), &b).unwrap(), 5.0);
        assert!(param_dot(&a, &ParamVector::zeros(3)).is_err());
    }

    #[test]
    fn serialization_round_trips_and_detects_truncation() {
        let v = ParamVector::new(vec![1.5, -0.25, f64::MIN_POSITIVE]);
        let bytes = v.to_bytes();
        assert_eq!(bytes.len(), 8 + 24);
        assert_eq!(ParamVector::read_from(&bytes[..]).unwrap(), v);
        match ParamVector::read_from(&bytes[..20]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 16),
            other => panic!("unexpected {other:?}"),
        }
    }
}
