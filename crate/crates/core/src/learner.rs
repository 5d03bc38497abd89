//! Multilayer perceptron with ReLU hidden layers, softmax cross-entropy,
//! hand-written backpropagation and heavy-ball momentum SGD.
//!
//! Parameters live in one flat buffer. Layer `l` occupies a contiguous span
//! holding its `out x in` weight matrix (row-major) followed by its `out`
//! biases, so aggregation across nodes is a plain vector operation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layer_sizes: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsHeader {
    layer_sizes: Vec<usize>,
}

impl ModelParams {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(config_err!("an MLP needs at least input and output sizes"));
        }
        if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(config_err!("layer {pos} has size 0"));
        }
        let mut offsets = vec![0];
        for w in layer_sizes.windows(2) {
            let last = *offsets.last().unwrap();
            offsets.push(last + w[1] * w[0] + w[1]);
        }
        let total = *offsets.last().unwrap();
        Ok(ModelParams {
            layer_sizes: layer_sizes.to_vec(),
            offsets,
            data: vec![0.0; total],
        })
    }

    pub fn from_flat(layer_sizes: &[usize], data: Vec<f64>) -> Result<Self> {
        let mut p = ModelParams::zeros(layer_sizes)?;
        if data.len() != p.data.len() {
            return Err(config_err!(
                "expected {} parameters for {:?}, got {}",
                p.data.len(),
                layer_sizes,
                data.len()
            ));
        }
        p.data = data;
        Ok(p)
    }

    /// Zero-filled buffer of the same architecture.
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            layer_sizes: self.layer_sizes.clone(),
            offsets: self.offsets.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_architecture(&self, other: &ModelParams) -> bool {
        self.layer_sizes == other.layer_sizes
    }

    fn split(&self, l: usize) -> (usize, usize, usize) {
        let start = self.offsets[l];
        let bias = start + self.layer_sizes[l + 1] * self.layer_sizes[l];
        (start, bias, self.offsets[l + 1])
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let (w, b, _) = self.split(l);
        &self.data[w..b]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (_, b, end) = self.split(l);
        &self.data[b..end]
    }

    fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (w, b, end) = self.split(l);
        let (weights, bias) = self.data[w..end].split_at_mut(b - w);
        (weights, bias)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Euclidean distance between two parameter vectors.
    pub fn distance(&self, other: &ModelParams) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// JSON header line, then the parameters as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_string(&ParamsHeader {
            layer_sizes: self.layer_sizes.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(header.len() + 1 + 8 * self.data.len());
        out.extend_from_slice(header.as_bytes());
        out.push(b'\n');
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| config_err!("parameter stream lacks a header line"))?;
        let header: ParamsHeader = serde_json::from_slice(&bytes[..nl])?;
        let body = &bytes[nl + 1..];
        if !body.len().is_multiple_of(8) {
            return Err(config_err!("parameter stream length is not a multiple of 8"));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ModelParams::from_flat(&header.layer_sizes, data)
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_mlp<R: Rng>(layer_sizes: &[usize], rng: &mut R) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(layer_sizes)?;
    for l in 0..p.num_layers() {
        let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let (w, _) = p.layer_mut(l);
        for x in w.iter_mut() {
            *x = rng.random_range(-a..a);
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    velocity: Vec<f64>,
    pub lr: f64,
    pub momentum: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(config_err!("learning rate must be positive, got {lr}"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(config_err!("momentum must be in [0,1), got {momentum}"));
        }
        Ok(OptimizerState {
            velocity: vec![0.0; params.len()],
            lr,
            momentum,
        })
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}

/// A mini-batch: row-major features and one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: Vec<f64>,
    dims: usize,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Vec<f64>, dims: usize, labels: Vec<usize>) -> Result<Self> {
        if features.len() != dims * labels.len() {
            return Err(Error::Usage(format!(
                "batch has {} values for {} rows of width {dims}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Batch {
            features,
            dims,
            labels,
        })
    }

    pub fn gather(ds: &Dataset, indices: &[usize]) -> Batch {
        let mut features = Vec::with_capacity(indices.len() * ds.dims());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(ds.sample(i));
            labels.push(ds.label(i));
        }
        Batch {
            features,
            dims: ds.dims(),
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// `out[r] = W x[r] + b` for every row.
fn affine(x: &[f64], rows: usize, fan_in: usize, w: &[f64], b: &[f64], out: &mut Vec<f64>) {
    let fan_out = b.len();
    out.clear();
    out.reserve(rows * fan_out);
    for r in 0..rows {
        let xr = &x[r * fan_in..(r + 1) * fan_in];
        for o in 0..fan_out {
            let wr = &w[o * fan_in..(o + 1) * fan_in];
            let dot: f64 = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
            out.push(dot + b[o]);
        }
    }
}

fn check_finite(values: &[f64], layer: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { layer })
    }
}

/// Runs the network on `rows` inputs and returns every layer's output;
/// the last entry holds the logits.
fn forward_all(p: &ModelParams, x: &[f64], rows: usize) -> Result<Vec<Vec<f64>>> {
    let input = p.layer_sizes[0];
    if x.len() != rows * input {
        return Err(Error::Usage(format!(
            "input width {} does not match the first layer ({input})",
            x.len().checked_div(rows).unwrap_or(0)
        )));
    }
    let layers = p.num_layers();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers);
    for l in 0..layers {
        let prev: &[f64] = if l == 0 { x } else { &acts[l - 1] };
        let mut out = Vec::new();
        affine(prev, rows, p.layer_sizes[l], p.weights(l), p.bias(l), &mut out);
        if l + 1 < layers {
            for v in &mut out {
                *v = v.max(0.0);
            }
        }
        check_finite(&out, l)?;
        acts.push(out);
    }
    Ok(acts)
}

/// Batched logits (`rows x classes`, row-major).
pub fn forward(p: &ModelParams, batch: &Batch) -> Result<Vec<f64>> {
    if batch.dims != p.layer_sizes[0] {
        return Err(Error::Usage(format!(
            "batch width {} does not match the first layer ({})",
            batch.dims, p.layer_sizes[0]
        )));
    }
    Ok(forward_all(p, &batch.features, batch.len())?
        .pop()
        .expect("at least one layer"))
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// Mean softmax cross-entropy and its gradient.
pub fn loss_and_grad(p: &ModelParams, batch: &Batch) -> Result<(f64, ModelParams)> {
    let rows = batch.len();
    if rows == 0 {
        return Err(Error::Usage("empty batch".into()));
    }
    let classes = *p.layer_sizes.last().unwrap();
    if let Some(&y) = batch.labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Usage(format!("label {y} outside the {classes} outputs")));
    }
    if batch.dims != p.layer_sizes[0] {
        return Err(Error::Usage(format!(
            "batch width {} does not match the first layer ({})",
            batch.dims, p.layer_sizes[0]
        )));
    }
    let acts = forward_all(p, &batch.features, rows)?;
    let layers = p.num_layers();
    let logits = &acts[layers - 1];

    let scale = 1.0 / rows as f64;
    let mut loss = 0.0;
    let mut delta = vec![0.0; rows * classes];
    for r in 0..rows {
        let z = &logits[r * classes..(r + 1) * classes];
        let lse = log_sum_exp(z);
        let y = batch.labels[r];
        loss += lse - z[y];
        let d = &mut delta[r * classes..(r + 1) * classes];
        for c in 0..classes {
            d[c] = (z[c] - lse).exp() * scale;
        }
        d[y] -= scale;
    }
    loss *= scale;
    if !loss.is_finite() {
        return Err(Error::Numeric { layer: layers - 1 });
    }

    let mut grads = p.zeros_like();
    for l in (0..layers).rev() {
        let fan_in = p.layer_sizes[l];
        let fan_out = p.layer_sizes[l + 1];
        let input: &[f64] = if l == 0 { &batch.features } else { &acts[l - 1] };
        {
            let (gw, gb) = grads.layer_mut(l);
            for r in 0..rows {
                let xr = &input[r * fan_in..(r + 1) * fan_in];
                let dr = &delta[r * fan_out..(r + 1) * fan_out];
                for (o, &d) in dr.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, &x) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(xr) {
                        *g += d * x;
                    }
                }
            }
        }
        if l == 0 {
            break;
        }
        let w = p.weights(l);
        let mut prev = vec![0.0; rows * fan_in];
        for r in 0..rows {
            let dr = &delta[r * fan_out..(r + 1) * fan_out];
            let pr = &mut prev[r * fan_in..(r + 1) * fan_in];
            for (o, &d) in dr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (acc, &wv) in pr.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *acc += d * wv;
                }
            }
            // ReLU derivative, taken on the layer's output.
            for (acc, &a) in pr.iter_mut().zip(&input[r * fan_in..(r + 1) * fan_in]) {
                if a <= 0.0 {
                    *acc = 0.0;
                }
            }
        }
        delta = prev;
    }
    Ok((loss, grads))
}

/// `v <- momentum * v + g; p <- p - lr * v`.
pub fn sgd_step(p: &mut ModelParams, grads: &ModelParams, s: &mut OptimizerState) {
    assert_eq!(p.len(), grads.len(), "gradient shape mismatch");
    assert_eq!(p.len(), s.velocity.len(), "optimizer shape mismatch");
    for ((w, &g), v) in p.data.iter_mut().zip(&grads.data).zip(&mut s.velocity) {
        *v = s.momentum * *v + g;
        *w -= s.lr * *v;
    }
}

/// Local training over a shard: per epoch, shuffle the shard with `rng` and
/// take one step per mini-batch. The last batch may be short. An empty
/// shard leaves everything untouched.
pub fn train_epochs<R: Rng>(
    p: &mut ModelParams,
    opt: &mut OptimizerState,
    ds: &Dataset,
    shard: &[usize],
    rng: &mut R,
    epochs: usize,
    batch_size: usize,
) -> Result<()> {
    if batch_size == 0 {
        return Err(config_err!("batch_size must be >= 1"));
    }
    if shard.is_empty() {
        return Ok(());
    }
    let mut order = shard.to_vec();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let batch = Batch::gather(ds, chunk);
            let (_, grads) = loss_and_grad(p, &batch)?;
            sgd_step(p, &grads, opt);
        }
    }
    Ok(())
}

pub type Confusion = Vec<Vec<u64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Mean cross-entropy over the test set.
    pub loss: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Confusion,
}

const EVAL_CHUNK: usize = 512;

/// Argmax accuracy (ties go to the lowest class), loss and confusion
/// counts over a test set.
pub fn evaluate(p: &ModelParams, test: &Dataset) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Usage("cannot evaluate on an empty test set".into()));
    }
    let classes = *p.layer_sizes.last().unwrap();
    if classes != test.class_count() {
        return Err(Error::Usage(format!(
            "model has {classes} outputs, test set has {} classes",
            test.class_count()
        )));
    }
    let dims = test.dims();
    let mut confusion = vec![vec![0u64; classes]; classes];
    let mut correct = 0usize;
    let mut loss = 0.0;
    for start in (0..test.len()).step_by(EVAL_CHUNK) {
        let rows = EVAL_CHUNK.min(test.len() - start);
        let x = &test.features()[start * dims..(start + rows) * dims];
        let logits = forward_all(p, x, rows)?.pop().unwrap();
        for r in 0..rows {
            let z = &logits[r * classes..(r + 1) * classes];
            let mut best = 0;
            for c in 1..classes {
                if z[c] > z[best] {
                    best = c;
                }
            }
            let y = test.label(start + r);
            confusion[y][best] += 1;
            if best == y {
                correct += 1;
            }
            loss += log_sum_exp(z) - z[y];
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / test.len() as f64,
        loss: loss / test.len() as f64,
        confusion,
    })
}
