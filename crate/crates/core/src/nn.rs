//! Dense feed-forward networks with explicit reverse-mode gradients, binary
//! cross-entropy, plain SGD, layer freezing and JSON persistence.
//!
//! Batches are row-major flat buffers: `batch × dim`.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const MODEL_VERSION: u32 = 1;
pub const BCE_EPSILON: f64 = 1e-7;

static STAMPS: AtomicU64 = AtomicU64::new(1);

fn next_stamp() -> u64 {
    STAMPS.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[serde(rename = "relu")]
    ReLU,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// Output dimension.
    pub rows: usize,
    /// Input dimension.
    pub cols: usize,
    /// Row-major `rows × cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    /// Uniform(-s, s) weights with s = scale / sqrt(fan_in), zero bias.
    pub fn random(
        input: usize,
        output: usize,
        activation: Activation,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let s = scale / (input.max(1) as f64).sqrt();
        let weights = (0..input * output).map(|_| rng.random_range(-s..s)).collect();
        Self {
            rows: output,
            cols: input,
            weights,
            bias: vec![0.0; output],
            activation,
            frozen: false,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            weights[i * n + i] = 1.0;
        }
        Self {
            rows: n,
            cols: n,
            weights,
            bias: vec![0.0; n],
            activation: Activation::Identity,
            frozen: false,
        }
    }

    pub fn is_head(&self) -> bool {
        self.rows == 1 && self.activation == Activation::Sigmoid
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn check(&self) -> Result<()> {
        if self.weights.len() != self.rows * self.cols || self.bias.len() != self.rows {
            return Err(Error::ShapeMismatch(format!(
                "layer {}x{} has {} weights and {} biases",
                self.rows,
                self.cols,
                self.weights.len(),
                self.bias.len()
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("layer has non-finite parameters".into()));
        }
        Ok(())
    }

    /// `x` is `b × cols`; returns `b × rows` post-activation.
    pub fn forward_batch(&self, x: &[f64], b: usize) -> Vec<f64> {
        let mut out = vec![0.0; b * self.rows];
        for s in 0..b {
            let xi = &x[s * self.cols..(s + 1) * self.cols];
            let yo = &mut out[s * self.rows..(s + 1) * self.rows];
            for (o, y) in yo.iter_mut().enumerate() {
                let w = &self.weights[o * self.cols..(o + 1) * self.cols];
                let z: f64 = self.bias[o] + w.iter().zip(xi).map(|(a, c)| a * c).sum::<f64>();
                *y = self.activation.apply(z);
            }
        }
        out
    }

    /// Gradients for one batch given the layer's input `x`, output `y` and
    /// upstream `dy`. Parameter gradients are omitted for frozen layers.
    fn backward_batch(
        &self,
        x: &[f64],
        y: &[f64],
        dy: &[f64],
        b: usize,
        need_input: bool,
    ) -> (Option<LayerGrad>, Vec<f64>) {
        let dz: Vec<f64> = y
            .iter()
            .zip(dy)
            .map(|(yv, d)| d * self.activation.derivative_from_output(*yv))
            .collect();
        let grad = (!self.frozen).then(|| {
            let mut gw = vec![0.0; self.rows * self.cols];
            let mut gb = vec![0.0; self.rows];
            for s in 0..b {
                let xi = &x[s * self.cols..(s + 1) * self.cols];
                for o in 0..self.rows {
                    let d = dz[s * self.rows + o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, xv) in gw[o * self.cols..(o + 1) * self.cols].iter_mut().zip(xi) {
                        *g += d * xv;
                    }
                }
            }
            LayerGrad {
                weights: gw,
                bias: gb,
            }
        });
        let mut dx = Vec::new();
        if need_input {
            dx = vec![0.0; b * self.cols];
            for s in 0..b {
                let dxi = &mut dx[s * self.cols..(s + 1) * self.cols];
                for o in 0..self.rows {
                    let d = dz[s * self.rows + o];
                    if d == 0.0 {
                        continue;
                    }
                    for (g, w) in dxi.iter_mut().zip(&self.weights[o * self.cols..(o + 1) * self.cols]) {
                        *g += d * w;
                    }
                }
            }
        }
        (grad, dx)
    }

    fn sgd(&mut self, g: &LayerGrad, lr: f64) {
        for (w, d) in self.weights.iter_mut().zip(&g.weights) {
            *w -= lr * d;
        }
        for (w, d) in self.bias.iter_mut().zip(&g.bias) {
            *w -= lr * d;
        }
    }
}

/// Ordered dense layers. Every parameter change issues a new stamp, which
/// invalidates forward caches taken earlier.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "StackFile", try_from = "StackFile")]
pub struct NetworkStack {
    input_dim: usize,
    layers: Vec<DenseLayer>,
    stamp: u64,
}

impl PartialEq for NetworkStack {
    fn eq(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim && self.layers == other.layers
    }
}

/// Activations recorded by a forward pass, enough for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stamp: u64,
    batch: usize,
    /// Input to layer i (`inputs[0]` is the network input).
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// One entry per layer; `None` for frozen layers.
    pub layers: Vec<Option<LayerGrad>>,
    /// Gradient with respect to the network input, `batch × input_dim`.
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn trainable_count(&self) -> usize {
        self.layers.iter().flatten().count()
    }

    /// Flattened parameter gradients of non-frozen layers, weights then bias per layer.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|g| g.weights.iter().chain(&g.bias).copied())
            .collect()
    }
}

impl NetworkStack {
    pub fn new(input_dim: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        let s = Self {
            input_dim,
            layers,
            stamp: next_stamp(),
        };
        s.validate()?;
        Ok(s)
    }

    /// Random stack with the given widths; hidden layers use `hidden`, the
    /// last layer `last`.
    pub fn random(
        input_dim: usize,
        widths: &[usize],
        hidden: Activation,
        last: Activation,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input_dim;
        for (i, &w) in widths.iter().enumerate() {
            let act = if i + 1 == widths.len() { last } else { hidden };
            layers.push(DenseLayer::random(prev, w, act, scale, rng));
            prev = w;
        }
        Self {
            input_dim,
            layers,
            stamp: next_stamp(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = self.input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            l.check()?;
            if l.cols != prev {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} expects {} inputs, previous width is {prev}",
                    l.cols
                )));
            }
            prev = l.rows;
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.rows)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Mutable access to a layer; invalidates outstanding caches.
    pub fn layer_mut(&mut self, i: usize) -> &mut DenseLayer {
        self.stamp = next_stamp();
        &mut self.layers[i]
    }

    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.layers.iter().filter(|l| !l.frozen).map(DenseLayer::param_count).sum()
    }

    /// Number of leading frozen layers.
    pub fn frozen_prefix_len(&self) -> usize {
        self.layers.iter().take_while(|l| l.frozen).count()
    }

    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Result<ForwardCache> {
        if x.len() != batch * self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input of length {} is not {batch} x {}",
                x.len(),
                self.input_dim
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for l in &self.layers {
            let next = l.forward_batch(&cur, batch);
            inputs.push(cur);
            cur = next;
        }
        Ok(ForwardCache {
            stamp: self.stamp,
            batch,
            inputs,
            output: cur,
        })
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let cache = self.forward_batch(input, 1)?;
        Ok((cache.output.clone(), cache))
    }

    /// Output only, without keeping a cache.
    pub fn predict_batch(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        if x.len() != batch * self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input of length {} is not {batch} x {}",
                x.len(),
                self.input_dim
            )));
        }
        let mut cur = x.to_vec();
        for l in &self.layers {
            cur = l.forward_batch(&cur, batch);
        }
        Ok(cur)
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.predict_batch(input, 1)
    }

    /// Reverse pass. `upstream` is dLoss/dOutput, `batch × output_dim`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Gradients> {
        self.backward_inner(cache, upstream, true)
    }

    /// Like [`backward`](Self::backward) but skips the input gradient.
    pub fn backward_params(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Gradients> {
        self.backward_inner(cache, upstream, false)
    }

    fn backward_inner(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        need_input: bool,
    ) -> Result<Gradients> {
        if cache.stamp != self.stamp || cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        let b = cache.batch;
        if upstream.len() != b * self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient has {} entries, expected {}",
                upstream.len(),
                b * self.output_dim()
            )));
        }
        let mut grads = vec![None; self.layers.len()];
        let mut d = upstream.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let y = if i + 1 < self.layers.len() { &cache.inputs[i + 1] } else { &cache.output };
            let want_dx = need_input || i > 0;
            let (g, dx) = layer.backward_batch(&cache.inputs[i], y, &d, b, want_dx);
            grads[i] = g;
            d = dx;
        }
        Ok(Gradients {
            layers: grads,
            input: if need_input { d } else { Vec::new() },
        })
    }

    /// Apply `-lr * grad` to every non-frozen layer.
    pub fn apply_sgd(&mut self, grads: &Gradients, lr: f64) {
        self.stamp = next_stamp();
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            if let (false, Some(g)) = (l.frozen, g) {
                l.sgd(g, lr);
            }
        }
    }

    /// Freeze the first `n` layers.
    pub fn freeze_prefix(&mut self, n: usize) -> Result<()> {
        if n > self.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot freeze {n} of {} layers",
                self.layers.len()
            )));
        }
        self.stamp = next_stamp();
        for l in &mut self.layers[..n] {
            l.frozen = true;
        }
        Ok(())
    }

    pub fn freeze_all(&mut self) {
        let n = self.layers.len();
        self.freeze_prefix(n).expect("n equals layer count");
    }

    /// Drop a trailing one-unit sigmoid head, if present.
    pub fn without_head(&self) -> NetworkStack {
        let mut layers = self.layers.clone();
        if layers.last().is_some_and(DenseLayer::is_head) {
            layers.pop();
        }
        NetworkStack {
            input_dim: self.input_dim,
            layers,
            stamp: next_stamp(),
        }
    }

    /// Remove the existing output head, then append `new_layers`. Frozen flags
    /// of existing layers are kept.
    pub fn append_layers(&self, new_layers: Vec<DenseLayer>) -> Result<NetworkStack> {
        let mut out = self.without_head();
        let mut prev = out.output_dim();
        for (i, l) in new_layers.iter().enumerate() {
            l.check()?;
            if l.cols != prev {
                return Err(Error::ShapeMismatch(format!(
                    "appended layer {i} expects {} inputs, stack provides {prev}",
                    l.cols
                )));
            }
            prev = l.rows;
        }
        out.layers.extend(new_layers);
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stack serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::CorruptFile {
            path: path.to_path_buf(),
            reason,
        };
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| corrupt("missing version".into()))?;
        if version != u64::from(MODEL_VERSION) {
            return Err(Error::VersionMismatch {
                found: version as u32,
                expected: MODEL_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}

#[derive(Serialize, Deserialize)]
struct StackFile {
    version: u32,
    input_dim: usize,
    layers: Vec<DenseLayer>,
}

impl From<NetworkStack> for StackFile {
    fn from(s: NetworkStack) -> Self {
        StackFile {
            version: MODEL_VERSION,
            input_dim: s.input_dim,
            layers: s.layers,
        }
    }
}

impl TryFrom<StackFile> for NetworkStack {
    type Error = String;

    fn try_from(f: StackFile) -> std::result::Result<Self, String> {
        if f.version != MODEL_VERSION {
            return Err(format!("unsupported stack version {}", f.version));
        }
        NetworkStack::new(f.input_dim, f.layers).map_err(|e| e.to_string())
    }
}

/// Binary cross-entropy with the prediction clamped to [ε, 1-ε]; returns
/// the loss and its derivative with respect to the prediction.
pub fn bce_loss(prediction: f64, label: f64) -> (f64, f64) {
    let p = prediction.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    let loss = -(label * p.ln() + (1.0 - label) * (1.0 - p).ln());
    let grad = -label / p + (1.0 - label) / (1.0 - p);
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 300,
            batch_size: usize::MAX,
            seed: 0,
            weight_init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::ConfigInvalid("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::ConfigInvalid("epochs must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigInvalid("batch_size must be > 0".into()));
        }
        if !(self.weight_init_scale > 0.0 && self.weight_init_scale.is_finite()) {
            return Err(Error::ConfigInvalid("weight_init_scale must be > 0".into()));
        }
        Ok(())
    }
}

/// Mean BCE over a batch of sigmoid outputs and the matching upstream gradient.
pub fn batch_bce(outputs: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    let b = outputs.len() as f64;
    let mut total = 0.0;
    let grad = outputs
        .iter()
        .zip(labels)
        .map(|(p, y)| {
            let (l, g) = bce_loss(*p, *y);
            total += l;
            g / b
        })
        .collect();
    (total / b, grad)
}

/// Shuffled mini-batch index lists for one epoch.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.min(n).max(1)).map(<[usize]>::to_vec).collect()
}

/// Mini-batch SGD on mean BCE. Only non-frozen layers move. Returns the mean
/// training loss of each epoch, accumulated over its batches.
pub fn train(
    stack: &mut NetworkStack,
    inputs: &[Vec<f64>],
    labels: &[f64],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if inputs.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} inputs but {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    if stack.output_dim() != 1 {
        return Err(Error::ShapeMismatch("classifier stack must end in one unit".into()));
    }
    let n = inputs.len();
    let dim = stack.input_dim();
    let mut flat = Vec::with_capacity(n * dim);
    for x in inputs {
        if x.len() != dim {
            return Err(Error::ShapeMismatch(format!("input of length {} for width {dim}", x.len())));
        }
        flat.extend_from_slice(x);
    }

    // Frozen leading layers are constant: push the data through them once.
    let prefix = stack.frozen_prefix_len();
    let mut suffix = NetworkStack {
        input_dim: if prefix == 0 { dim } else { stack.layers[prefix - 1].rows },
        layers: stack.layers[prefix..].to_vec(),
        stamp: next_stamp(),
    };
    let mut feats = flat;
    for l in &stack.layers[..prefix] {
        feats = l.forward_batch(&feats, n);
    }
    let sd = suffix.input_dim;

    let mut rng = seed::stream(config.seed, "sgd-shuffle");
    let mut trace = Vec::with_capacity(config.epochs);
    let mut xb = Vec::new();
    let mut yb = Vec::new();
    for _ in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for batch in epoch_batches(n, config.batch_size, &mut rng) {
            xb.clear();
            yb.clear();
            for &i in &batch {
                xb.extend_from_slice(&feats[i * sd..(i + 1) * sd]);
                yb.push(labels[i]);
            }
            let cache = suffix.forward_batch(&xb, batch.len())?;
            let (loss, up) = batch_bce(cache.output(), &yb);
            epoch_loss += loss * batch.len() as f64;
            if suffix.trainable_param_count() > 0 {
                let grads = suffix.backward_inner(&cache, &up, false)?;
                suffix.apply_sgd(&grads, config.learning_rate);
            }
        }
        trace.push(epoch_loss / n as f64);
    }
    if suffix.trainable_param_count() > 0 {
        stack.layers.truncate(prefix);
        stack.layers.extend(suffix.layers);
        stack.stamp = next_stamp();
    }
    Ok(trace)
}

/// Fresh layers for appending, drawn from `seed`'s stream `label`.
pub fn fresh_layers(
    input: usize,
    widths: &[usize],
    hidden: Activation,
    last: Activation,
    scale: f64,
    seed: u64,
    label: &str,
) -> Vec<DenseLayer> {
    let mut rng = seed::stream(seed, label);
    NetworkStack::random(input, widths, hidden, last, scale, &mut rng).layers
}
