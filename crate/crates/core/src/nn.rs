//! Dense feed-forward regression networks.
//!
//! Weights are stored row-major with shape `(out, in)`. Every model ends in a
//! single identity unit, so `forward` always yields one scalar. Models are
//! immutable once built; training works on a private copy.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{check_finite, check_len, Error, Result};
use crate::textfmt::{push_floats, read_file, Lines};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    /// Derivative with the saturated convention: relu'(0) = 0.
    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(format!("unknown activation '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(
        rows: usize,
        cols: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Invalid {
                what: "layer",
                msg: format!("zero-sized layer {rows}x{cols}"),
            });
        }
        check_len("layer weights", rows * cols, weights.len())?;
        check_len("layer bias", rows, bias.len())?;
        check_finite("layer weights", &weights)?;
        check_finite("layer bias", &bias)?;
        Ok(DenseLayer {
            rows,
            cols,
            weights,
            bias,
            activation,
        })
    }

    /// Builds a layer from nested rows, one inner vector per output unit.
    pub fn from_rows(rows: &[Vec<f64>], bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Invalid {
                what: "layer",
                msg: "ragged weight rows".into(),
            });
        }
        let flat = rows.iter().flatten().copied().collect();
        DenseLayer::new(rows.len(), cols, flat, bias, activation)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.cols + inp]
    }

    pub fn row(&self, out: usize) -> &[f64] {
        &self.weights[out * self.cols..(out + 1) * self.cols]
    }

    fn affine_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.cols)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b),
        );
    }

    /// `W^T v`
    fn transpose_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &d) in self.weights.chunks_exact(self.cols).zip(v) {
            if d == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * d;
            }
        }
        out
    }
}

/// Pre-activations and activations of every layer for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
    pub output: f64,
}

impl ForwardTrace {
    /// Input to layer `l` (the sample itself for `l == 0`).
    pub fn layer_input(&self, l: usize) -> &[f64] {
        if l == 0 {
            &self.input
        } else {
            &self.post[l - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<DenseLayer>,
    input_dim: usize,
    feature_names: Vec<String>,
}

impl MlpModel {
    pub fn new(input_dim: usize, layers: Vec<DenseLayer>, feature_names: Vec<String>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invalid {
                what: "model",
                msg: "no layers".into(),
            });
        }
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.cols != width {
                return Err(Error::Invalid {
                    what: "model",
                    msg: format!("layer {i} expects {} inputs but receives {width}", layer.cols),
                });
            }
            width = layer.rows;
        }
        let last = layers.last().expect("non-empty");
        if last.rows != 1 || last.activation != Activation::Identity {
            return Err(Error::Invalid {
                what: "model",
                msg: "final layer must have width 1 and identity activation".into(),
            });
        }
        let feature_names = if feature_names.is_empty() {
            default_feature_names(input_dim)
        } else {
            feature_names
        };
        check_len("feature names", input_dim, feature_names.len())?;
        Ok(MlpModel {
            layers,
            input_dim,
            feature_names,
        })
    }

    /// Relu network with Glorot-uniform weights and zero biases.
    pub fn random(input_dim: usize, hidden: &[usize], seed: u64, feature_names: Vec<String>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for (i, &fan_out) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..=limit))
                .collect();
            let activation = if i == hidden.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(DenseLayer::new(fan_out, fan_in, weights, vec![0.0; fan_out], activation)?);
            fan_in = fan_out;
        }
        MlpModel::new(input_dim, layers, feature_names)
    }

    /// `y = w . x + b`
    pub fn linear(weights: &[f64], bias: f64) -> Result<Self> {
        let layer = DenseLayer::new(1, weights.len(), weights.to_vec(), vec![bias], Activation::Identity)?;
        MlpModel::new(weights.len(), vec![layer], Vec::new())
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Width of the activation vector produced by layer `l`.
    pub fn layer_width(&self, l: usize) -> usize {
        self.layers[l].rows
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        check_len("model input", self.input_dim, x.len())?;
        check_finite("model input", x)
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = post.last().map_or(x, Vec::as_slice);
            let mut z = Vec::with_capacity(layer.rows);
            layer.affine_into(input, &mut z);
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            post.push(a);
        }
        let output = post.last().expect("non-empty")[0];
        Ok(ForwardTrace {
            input: x.to_vec(),
            pre,
            post,
            output,
        })
    }

    /// Output only, without keeping the trace.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward_range(0, x))
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    fn forward_range(&self, start: usize, input: &[f64]) -> f64 {
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers[start..] {
            layer.affine_into(&cur, &mut next);
            for v in next.iter_mut() {
                *v = layer.activation.apply(*v);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    /// Applies `layers[start..]` to an activation vector of layer `start - 1`.
    pub fn forward_from(&self, start: usize, activation: &[f64]) -> Result<f64> {
        if start == 0 || start >= self.layers.len() {
            return Err(Error::IndexOutOfRange {
                index: start,
                len: self.layers.len(),
            });
        }
        check_len("latent activation", self.layers[start].cols, activation.len())?;
        Ok(self.forward_range(start, activation))
    }

    /// Post-activation vector of layer `l`.
    pub fn activations_at(&self, x: &[f64], l: usize) -> Result<Vec<f64>> {
        if l >= self.layers.len() {
            return Err(Error::IndexOutOfRange {
                index: l,
                len: self.layers.len(),
            });
        }
        let mut trace = self.forward(x)?;
        Ok(trace.post.swap_remove(l))
    }

    /// `dy/dx` by reverse accumulation.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let trace = self.forward(x)?;
        Ok(self.backprop_input(&trace, 1.0))
    }

    /// Gradient of `scale * y` with respect to the input, given a trace.
    pub fn backprop_input(&self, trace: &ForwardTrace, scale: f64) -> Vec<f64> {
        let mut delta = vec![scale];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            for (d, &z) in delta.iter_mut().zip(&trace.pre[l]) {
                *d *= layer.activation.derivative(z);
            }
            delta = layer.transpose_mul(&delta);
        }
        delta
    }

    fn accumulate_param_grads(&self, trace: &ForwardTrace, scale: f64, grads: &mut [LayerGrad]) {
        let mut delta = vec![scale];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            for (d, &z) in delta.iter_mut().zip(&trace.pre[l]) {
                *d *= layer.activation.derivative(z);
            }
            let input = trace.layer_input(l);
            let g = &mut grads[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.cols..(o + 1) * layer.cols];
                for (w, &a) in row.iter_mut().zip(input) {
                    *w += d * a;
                }
            }
            if l > 0 {
                delta = layer.transpose_mul(&delta);
            }
        }
    }

    pub fn mse(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total = 0.0;
        for (x, t) in data.rows() {
            let e = self.predict(x)? - t;
            total += e * e;
        }
        Ok(total / data.len() as f64)
    }

    pub fn r_squared(&self, data: &Dataset) -> Result<f64> {
        let pred = self.predict_batch(data.features())?;
        Ok(r_squared(&pred, data.targets()))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("mlp v1 {}\n", self.input_dim);
        for layer in &self.layers {
            out.push_str(&format!("layer {} {} {}\n", layer.rows, layer.cols, layer.activation));
            for row in layer.weights.chunks_exact(layer.cols) {
                push_floats(&mut out, row);
            }
            push_floats(&mut out, &layer.bias);
        }
        out.push_str("features ");
        out.push_str(&self.feature_names.join(","));
        out.push('\n');
        out
    }

    pub fn from_text(source: &str, text: &str) -> Result<Self> {
        let mut lines = Lines::new(source, text);
        let (n, header) = lines.next("header")?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "mlp" || parts[1] != "v1" {
            return Err(lines.err(n, "expected header 'mlp v1 <input_dim>'"));
        }
        let input_dim: usize = lines.parse(n, "input_dim", parts[2])?;
        let mut layers = Vec::new();
        let mut feature_names = Vec::new();
        while !lines.at_end() {
            let (n, line) = lines.next("layer")?;
            if let Some(rest) = line.strip_prefix("features") {
                feature_names = rest
                    .trim()
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                if !lines.at_end() {
                    let (n, _) = lines.next("end of file")?;
                    return Err(lines.err(n, "trailing content after features line"));
                }
                break;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "layer" {
                return Err(lines.err(n, "expected 'layer <rows> <cols> <activation>'"));
            }
            let rows: usize = lines.parse(n, "rows", parts[1])?;
            let cols: usize = lines.parse(n, "cols", parts[2])?;
            let activation: Activation = parts[3].parse().map_err(|e: String| lines.err(n, e))?;
            let mut weights = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                weights.extend(lines.floats(cols, &format!("weights row {r}"))?);
            }
            let bias = lines.floats(rows, "bias")?;
            layers.push(
                DenseLayer::new(rows, cols, weights, bias, activation).map_err(|e| lines.err(n, e.to_string()))?,
            );
        }
        if feature_names.is_empty() {
            return Err(lines.err(0, "missing trailing 'features' line (file truncated?)"));
        }
        MlpModel::new(input_dim, layers, feature_names)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        MlpModel::from_text(&path.display().to_string(), &text)
    }
}

pub fn default_feature_names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

pub fn r_squared(pred: &[f64], target: &[f64]) -> f64 {
    let n = target.len() as f64;
    let mean = target.iter().sum::<f64>() / n;
    let ss_tot: f64 = target.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    /// Plain mini-batch gradient descent.
    Sgd,
    Adam { beta1: f64, beta2: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2_penalty: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            l2_penalty: 0.0,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| {
            Err(Error::Invalid {
                what: "train config",
                msg: msg.into(),
            })
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.l2_penalty >= 0.0) {
            return bad("l2_penalty must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Full-dataset MSE before training (index 0) and after each epoch.
    pub loss_history: Vec<f64>,
    /// Epoch whose weights were kept (0 = initial weights).
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.loss_history[0]
    }

    pub fn final_loss(&self) -> f64 {
        self.loss_history[self.best_epoch]
    }
}

#[derive(Clone)]
struct LayerGrad {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LayerGrad {
    fn zeros_like(layer: &DenseLayer) -> Self {
        LayerGrad {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }

    fn clear(&mut self) {
        self.weights.fill(0.0);
        self.bias.fill(0.0);
    }
}

/// Fits `model` to `data` by minimizing mean squared error.
///
/// The returned model carries the weights of the epoch with the lowest full
/// training loss, so the reported final loss never exceeds the initial one.
pub fn train(model: &MlpModel, data: &Dataset, cfg: &TrainConfig) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_len("dataset features", model.input_dim, data.dim())?;

    let mut current = model.clone();
    let initial = current.mse(data)?;
    if !initial.is_finite() {
        return Err(Error::Divergence { epoch: 0 });
    }
    let mut history = vec![initial];
    let mut best = (initial, 0usize, current.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads: Vec<LayerGrad> = current.layers.iter().map(LayerGrad::zeros_like).collect();
    let mut m1: Vec<LayerGrad> = grads.clone();
    let mut m2: Vec<LayerGrad> = grads.clone();
    let mut step = 0i32;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(LayerGrad::clear);
            let scale = 2.0 / batch.len() as f64;
            for &i in batch {
                let x = &data.features()[i];
                let trace = current.forward(x)?;
                let err = trace.output - data.targets()[i];
                current.accumulate_param_grads(&trace, scale * err, &mut grads);
            }
            step += 1;
            apply_update(&mut current, &grads, &mut m1, &mut m2, cfg, step);
        }
        let loss = current.mse(data)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(loss);
        if loss < best.0 {
            best = (loss, epoch, current.clone());
        }
    }

    let (_, best_epoch, model) = best;
    Ok((
        model,
        TrainReport {
            loss_history: history,
            best_epoch,
        },
    ))
}

fn apply_update(
    model: &mut MlpModel,
    grads: &[LayerGrad],
    m1: &mut [LayerGrad],
    m2: &mut [LayerGrad],
    cfg: &TrainConfig,
    step: i32,
) {
    let lr = cfg.learning_rate;
    for (l, layer) in model.layers.iter_mut().enumerate() {
        let g = &grads[l];
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                    *w -= lr * (gw + 2.0 * cfg.l2_penalty * *w);
                }
                for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                    *b -= lr * gb;
                }
            }
            Optimizer::Adam { beta1, beta2 } => {
                let c1 = 1.0 - beta1.powi(step);
                let c2 = 1.0 - beta2.powi(step);
                let adam = |p: &mut f64, grad: f64, m: &mut f64, v: &mut f64| {
                    *m = beta1 * *m + (1.0 - beta1) * grad;
                    *v = beta2 * *v + (1.0 - beta2) * grad * grad;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
                };
                let (mw, vw) = (&mut m1[l].weights, &mut m2[l].weights);
                for (i, w) in layer.weights.iter_mut().enumerate() {
                    let grad = g.weights[i] + 2.0 * cfg.l2_penalty * *w;
                    adam(w, grad, &mut mw[i], &mut vw[i]);
                }
                let (mb, vb) = (&mut m1[l].bias, &mut m2[l].bias);
                for (i, b) in layer.bias.iter_mut().enumerate() {
                    adam(b, g.bias[i], &mut mb[i], &mut vb[i]);
                }
            }
        }
    }
}
