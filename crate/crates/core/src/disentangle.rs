//! Per-expert surrogate heads over a latent layer.
//!
//! Each head is linear in the activations `a` entering `attach_layer` and
//! publishes `z_hat_m = relu(s_m) - relu(s_m - tau_m)`. Heads are trained
//! with a loss that only asks for exactness inside the expert's range and for
//! the correct side outside it.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attribution::{exact_multi, MAX_EXACT_FEATURES};
use crate::data::Dataset;
use crate::error::{check_finite, check_len, Error, Result};
use crate::experts::RangeExpertBank;
use crate::nn::{MlpModel, Optimizer};
use crate::target::ScalarFunction;
use crate::textfmt::{push_floats, read_file, Lines};

/// Margin added to the largest observed top-expert value to obtain its cap.
const TOP_CAP_MARGIN: f64 = 0.1;

pub fn clip_via_relu(s: f64, tau: f64) -> f64 {
    s.max(0.0) - (s - tau).max(0.0)
}

/// Piecewise surrogate loss for one expert.
pub fn surrogate_loss(s: f64, z: f64, tau: f64) -> f64 {
    if z <= 0.0 {
        s.max(0.0)
    } else if z < tau {
        (s - z).abs()
    } else {
        (tau - s).max(0.0)
    }
}

/// Subgradient of [`surrogate_loss`] in `s`, zero at every kink.
pub fn surrogate_loss_subgradient(s: f64, z: f64, tau: f64) -> f64 {
    if z <= 0.0 {
        if s > 0.0 {
            1.0
        } else {
            0.0
        }
    } else if z < tau {
        if s > z {
            1.0
        } else if s < z {
            -1.0
        } else {
            0.0
        }
    } else if s < tau {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateHead {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub bias_frozen: bool,
    pub tau: f64,
}

impl SurrogateHead {
    pub fn score(&self, a: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(a).map(|(w, v)| w * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateReport {
    pub within_range_mae: Vec<f64>,
    pub side_accuracy: Vec<f64>,
    pub epochs: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateHeads {
    attach_layer: usize,
    heads: Vec<SurrogateHead>,
    /// Cap used for an unbounded top expert.
    top_cap: Option<f64>,
    report: Option<SurrogateReport>,
}

impl SurrogateHeads {
    pub fn new(attach_layer: usize, heads: Vec<SurrogateHead>, top_cap: Option<f64>) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::Invalid {
                what: "surrogate heads",
                msg: "need at least one head".into(),
            });
        }
        let width = heads[0].weights.len();
        for h in &heads {
            check_len("head weights", width, h.weights.len())?;
            check_finite("head weights", &h.weights)?;
            check_finite("head bias", &[h.bias])?;
            if !(h.tau > 0.0 && h.tau.is_finite()) {
                return Err(Error::Invalid {
                    what: "surrogate heads",
                    msg: format!("tau must be positive and finite, got {}", h.tau),
                });
            }
        }
        Ok(SurrogateHeads {
            attach_layer,
            heads,
            top_cap,
            report: None,
        })
    }

    pub fn attach_layer(&self) -> usize {
        self.attach_layer
    }

    pub fn heads(&self) -> &[SurrogateHead] {
        &self.heads
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn latent_dim(&self) -> usize {
        self.heads[0].weights.len()
    }

    pub fn top_cap(&self) -> Option<f64> {
        self.top_cap
    }

    pub fn report(&self) -> Option<&SurrogateReport> {
        self.report.as_ref()
    }

    pub fn taus(&self) -> Vec<f64> {
        self.heads.iter().map(|h| h.tau).collect()
    }

    /// Raw head outputs `s_m` for a latent vector.
    pub fn scores(&self, a: &[f64]) -> Result<Vec<f64>> {
        check_len("latent activation", self.latent_dim(), a.len())?;
        Ok(self.heads.iter().map(|h| h.score(a)).collect())
    }

    pub fn clip_scores(&self, scores: &[f64]) -> Vec<f64> {
        scores
            .iter()
            .zip(&self.heads)
            .map(|(&s, h)| clip_via_relu(s, h.tau))
            .collect()
    }

    /// Latent activations of `x` at the attach layer.
    pub fn latent(&self, model: &MlpModel, x: &[f64]) -> Result<Vec<f64>> {
        latent_at(model, self.attach_layer, x)
    }

    /// Published expert values `z_hat` for an input sample.
    pub fn published(&self, model: &MlpModel, x: &[f64]) -> Result<Vec<f64>> {
        let a = self.latent(model, x)?;
        Ok(self.clip_scores(&self.scores(&a)?))
    }

    fn check_model(&self, model: &MlpModel, bank: &RangeExpertBank) -> Result<()> {
        check_len("surrogate heads", bank.num_experts(), self.len())?;
        check_attach(model, self.attach_layer)?;
        check_len("head weights", latent_width(model, self.attach_layer), self.latent_dim())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("heads v1 attach={} M={}", self.attach_layer, self.heads.len());
        if let Some(cap) = self.top_cap {
            let _ = write!(out, " cap={cap}");
        }
        out.push('\n');
        for h in &self.heads {
            let _ = writeln!(out, "head frozen={} tau={} bias={}", h.bias_frozen as u8, h.tau, h.bias);
            push_floats(&mut out, &h.weights);
        }
        out
    }

    pub fn from_text(source: &str, text: &str) -> Result<Self> {
        let mut lines = Lines::new(source, text);
        let (n, header) = lines.next("header")?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() < 4 || parts[0] != "heads" || parts[1] != "v1" {
            return Err(lines.err(n, "expected 'heads v1 attach=<layer> M=<count>'"));
        }
        let attach: usize = lines.key_value(n, "attach", parts[2])?;
        let count: usize = lines.key_value(n, "M", parts[3])?;
        let cap: Option<f64> = parts.get(4).map(|t| lines.key_value(n, "cap", t)).transpose()?;
        if count == 0 {
            return Err(lines.err(n, "M must be positive"));
        }
        let mut heads = Vec::with_capacity(count);
        let mut width = None;
        for _ in 0..count {
            let (n, line) = lines.next("head line")?;
            let p: Vec<&str> = line.split_whitespace().collect();
            if p.len() != 4 || p[0] != "head" {
                return Err(lines.err(n, "expected 'head frozen=<0|1> tau=<f> bias=<f>'"));
            }
            let frozen: u8 = lines.key_value(n, "frozen", p[1])?;
            let tau: f64 = lines.key_value(n, "tau", p[2])?;
            let bias: f64 = lines.key_value(n, "bias", p[3])?;
            let weights = match width {
                Some(w) => lines.floats(w, "head weights")?,
                None => {
                    let (n, text) = lines.next("head weights")?;
                    let w = text
                        .split_whitespace()
                        .map(|t| lines.parse::<f64>(n, "head weights", t))
                        .collect::<Result<Vec<_>>>()?;
                    width = Some(w.len());
                    w
                }
            };
            heads.push(SurrogateHead {
                weights,
                bias,
                bias_frozen: frozen == 1,
                tau,
            });
        }
        if !lines.at_end() {
            let (n, _) = lines.next("end")?;
            return Err(lines.err(n, "trailing content after last head"));
        }
        SurrogateHeads::new(attach, heads, cap)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        SurrogateHeads::from_text(&path.display().to_string(), &text)
    }
}

fn check_attach(model: &MlpModel, attach: usize) -> Result<()> {
    if attach >= model.layers().len() {
        return Err(Error::IndexOutOfRange {
            index: attach,
            len: model.layers().len(),
        });
    }
    Ok(())
}

fn latent_width(model: &MlpModel, attach: usize) -> usize {
    model.layers()[attach].cols()
}

fn latent_at(model: &MlpModel, attach: usize, x: &[f64]) -> Result<Vec<f64>> {
    if attach == 0 {
        check_len("sample", model.input_dim(), x.len())?;
        Ok(x.to_vec())
    } else {
        model.activations_at(x, attach - 1)
    }
}

fn output_from_latent(model: &MlpModel, attach: usize, a: &[f64]) -> Result<f64> {
    if attach == 0 {
        model.predict(a)
    } else {
        model.forward_from(attach, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadInit {
    /// Each head starts as the model's output layer shifted to its breakpoint.
    CopyTopLayer,
    ConditionalPca,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateFitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dropout_augmentation: bool,
    pub init: HeadInit,
    pub l2_penalty: f64,
    /// Defaults to the output layer's input.
    pub attach_layer: Option<usize>,
    pub freeze_bias: bool,
    pub optimizer: Optimizer,
}

impl Default for SurrogateFitConfig {
    fn default() -> Self {
        SurrogateFitConfig {
            learning_rate: 0.005,
            epochs: 60,
            batch_size: 32,
            seed: 0,
            dropout_augmentation: false,
            init: HeadInit::ConditionalPca,
            l2_penalty: 0.0,
            attach_layer: None,
            freeze_bias: false,
            optimizer: Optimizer::adam(),
        }
    }
}

impl SurrogateFitConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| {
            Err(Error::Invalid {
                what: "surrogate config",
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

/// Per-expert clip widths used for fitting: the bank's widths, with an
/// unbounded top capped at the largest observed value plus a margin.
fn fit_widths(bank: &RangeExpertBank, predictions: &[f64]) -> (Vec<f64>, Option<f64>) {
    let experts = bank.num_experts();
    let mut taus: Vec<f64> = (0..experts).map(|m| bank.width(m)).collect();
    let mut cap = None;
    let top = experts - 1;
    if !taus[top].is_finite() {
        let seen = predictions
            .iter()
            .map(|&y| y - bank.offset() - bank.breakpoints()[top])
            .fold(0.0f64, f64::max);
        let c = if seen > 0.0 {
            seen * (1.0 + TOP_CAP_MARGIN)
        } else {
            bank.bounded_width(top)
        };
        taus[top] = c;
        cap = Some(c);
    }
    (taus, cap)
}

fn targets_for(bank: &RangeExpertBank, taus: &[f64], y: f64) -> Vec<f64> {
    (0..taus.len())
        .map(|m| (y - bank.offset() - bank.breakpoints()[m]).clamp(0.0, taus[m]))
        .collect()
}

/// First principal direction of the in-range activations for expert `m`,
/// scaled so projections span `[0, tau]` and oriented to correlate positively
/// with `z_m`. Returns `None` when fewer than two samples are in range.
pub fn conditional_pca_init(activations: &[Vec<f64>], targets: &[f64], tau: f64) -> Option<(Vec<f64>, f64)> {
    let idx: Vec<usize> = targets
        .iter()
        .enumerate()
        .filter(|(_, &z)| z > 0.0 && z < tau)
        .map(|(i, _)| i)
        .collect();
    if idx.len() < 2 || activations.is_empty() {
        return None;
    }
    let h = activations[0].len();
    let n = idx.len() as f64;
    let mut mean = vec![0.0; h];
    for &i in &idx {
        for (m, v) in mean.iter_mut().zip(&activations[i]) {
            *m += v / n;
        }
    }
    let centered: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| activations[i].iter().zip(&mean).map(|(a, m)| a - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; h]; h];
    for c in &centered {
        for r in 0..h {
            if c[r] == 0.0 {
                continue;
            }
            for k in 0..h {
                cov[r][k] += c[r] * c[k];
            }
        }
    }
    // Power iteration from a deterministic start that is not orthogonal to
    // any axis.
    let mut v: Vec<f64> = (0..h).map(|i| 1.0 + 0.01 * i as f64).collect();
    let mut norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    for _ in 0..500 {
        let next: Vec<f64> = cov.iter().map(|row| row.iter().zip(&v).map(|(c, x)| c * x).sum()).collect();
        norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return None;
        }
        let change: f64 = next.iter().zip(&v).map(|(a, b)| (a / norm - b).abs()).sum();
        v = next.into_iter().map(|x| x / norm).collect();
        if change < 1e-12 {
            break;
        }
    }
    let proj: Vec<f64> = idx
        .iter()
        .map(|&i| activations[i].iter().zip(&v).map(|(a, w)| a * w).sum())
        .collect();
    let pm = proj.iter().sum::<f64>() / n;
    let zm = idx.iter().map(|&i| targets[i]).sum::<f64>() / n;
    let cov_pz: f64 = proj.iter().zip(&idx).map(|(p, &i)| (p - pm) * (targets[i] - zm)).sum();
    if cov_pz < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let proj: Vec<f64> = if cov_pz < 0.0 { proj.iter().map(|p| -p).collect() } else { proj };
    let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-300 {
        return None;
    }
    let scale = tau / (hi - lo);
    let weights: Vec<f64> = v.iter().map(|x| x * scale).collect();
    Some((weights, -lo * scale))
}

fn empirical_loss(heads: &[SurrogateHead], latents: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let n = latents.len().max(1) as f64;
    latents
        .iter()
        .zip(targets)
        .map(|(a, z)| {
            heads
                .iter()
                .zip(z)
                .map(|(h, &zm)| surrogate_loss(h.score(a), zm, h.tau))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n
}

/// Within-range MAE and outside-range side accuracy per expert.
fn fidelity(heads: &[SurrogateHead], latents: &[Vec<f64>], targets: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let experts = heads.len();
    let mut mae = vec![0.0; experts];
    let mut inside = vec![0usize; experts];
    let mut correct = vec![0usize; experts];
    let mut outside = vec![0usize; experts];
    for (a, z) in latents.iter().zip(targets) {
        for (m, h) in heads.iter().enumerate() {
            let s = h.score(a);
            let zm = z[m];
            if zm > 0.0 && zm < h.tau {
                mae[m] += (s - zm).abs();
                inside[m] += 1;
            } else {
                outside[m] += 1;
                let ok = if zm <= 0.0 { s <= 0.0 } else { s >= h.tau };
                correct[m] += ok as usize;
            }
        }
    }
    let mae = mae
        .iter()
        .zip(&inside)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    let acc = correct
        .iter()
        .zip(&outside)
        .map(|(&c, &o)| if o == 0 { 1.0 } else { c as f64 / o as f64 })
        .collect();
    (mae, acc)
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Fits one linear head per expert on the model's latent activations.
pub fn fit_surrogate(
    model: &MlpModel,
    bank: &RangeExpertBank,
    dataset: &Dataset,
    cfg: &SurrogateFitConfig,
) -> Result<SurrogateHeads> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_len("dataset features", model.input_dim(), dataset.dim())?;
    let n_layers = model.layers().len();
    let attach = cfg.attach_layer.unwrap_or(n_layers - 1);
    check_attach(model, attach)?;
    let width = latent_width(model, attach);

    let predictions = model.predict_batch(dataset.features())?;
    let (taus, cap) = fit_widths(bank, &predictions);
    let latents = dataset
        .features()
        .iter()
        .map(|x| latent_at(model, attach, x))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Vec<f64>> = predictions.iter().map(|&y| targets_for(bank, &taus, y)).collect();

    let experts = bank.num_experts();
    let mut heads: Vec<SurrogateHead> = Vec::with_capacity(experts);
    for (m, &tau) in taus.iter().enumerate() {
        let (weights, bias) = match cfg.init {
            HeadInit::Zeros => (vec![0.0; width], 0.0),
            HeadInit::CopyTopLayer => {
                if attach != n_layers - 1 {
                    return Err(Error::Config(format!(
                        "copy_top_layer init needs the heads attached to the output layer input ({}), got {attach}",
                        n_layers - 1
                    )));
                }
                let top = &model.layers()[n_layers - 1];
                (top.row(0).to_vec(), top.bias()[0] - bank.offset() - bank.breakpoints()[m])
            }
            HeadInit::ConditionalPca => {
                let zm: Vec<f64> = targets.iter().map(|z| z[m]).collect();
                match conditional_pca_init(&latents, &zm, tau) {
                    Some(init) => init,
                    None => {
                        log::warn!("expert {m}: fewer than two in-range samples, initializing head with zeros");
                        (vec![0.0; width], 0.0)
                    }
                }
            }
        };
        heads.push(SurrogateHead {
            weights,
            bias,
            bias_frozen: cfg.freeze_bias,
            tau,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..latents.len()).collect();
    let mut state: Vec<AdamState> = (0..experts)
        .map(|_| AdamState {
            m: vec![0.0; width + 1],
            v: vec![0.0; width + 1],
        })
        .collect();
    let mut grads = vec![vec![0.0; width + 1]; experts];
    let mut step = 0i32;
    let mut masked = vec![0.0; width];

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| g.fill(0.0));
            let p: f64 = if cfg.dropout_augmentation { rng.random() } else { 0.0 };
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (a, z): (&[f64], Vec<f64>) = if p > 0.0 {
                    for (o, &v) in masked.iter_mut().zip(&latents[i]) {
                        *o = if rng.random::<f64>() < p { 0.0 } else { v };
                    }
                    let y = output_from_latent(model, attach, &masked)?;
                    (&masked, targets_for(bank, &taus, y))
                } else {
                    (&latents[i], targets[i].clone())
                };
                for (m, h) in heads.iter().enumerate() {
                    let g = surrogate_loss_subgradient(h.score(a), z[m], h.tau);
                    if g == 0.0 {
                        continue;
                    }
                    let gm = &mut grads[m];
                    for (gw, &v) in gm.iter_mut().zip(a) {
                        *gw += scale * g * v;
                    }
                    gm[width] += scale * g;
                }
            }
            step += 1;
            for (m, h) in heads.iter_mut().enumerate() {
                let g = &grads[m];
                let st = &mut state[m];
                let lr = cfg.learning_rate;
                let update = |k: usize, p: &mut f64, grad: f64, st: &mut AdamState| match cfg.optimizer {
                    Optimizer::Sgd => *p -= lr * grad,
                    Optimizer::Adam { beta1, beta2 } => {
                        st.m[k] = beta1 * st.m[k] + (1.0 - beta1) * grad;
                        st.v[k] = beta2 * st.v[k] + (1.0 - beta2) * grad * grad;
                        let mh = st.m[k] / (1.0 - beta1.powi(step));
                        let vh = st.v[k] / (1.0 - beta2.powi(step));
                        *p -= lr * mh / (vh.sqrt() + 1e-8);
                    }
                };
                for k in 0..width {
                    let grad = g[k] + 2.0 * cfg.l2_penalty * h.weights[k];
                    update(k, &mut h.weights[k], grad, st);
                }
                if !h.bias_frozen {
                    update(width, &mut h.bias, g[width], st);
                }
            }
        }
        if heads.iter().any(|h| !h.bias.is_finite() || h.weights.iter().any(|w| !w.is_finite())) {
            return Err(Error::Divergence { epoch });
        }
        log::debug!("surrogate epoch {epoch}: loss {}", empirical_loss(&heads, &latents, &targets));
    }

    let final_loss = empirical_loss(&heads, &latents, &targets);
    if !final_loss.is_finite() {
        return Err(Error::Divergence { epoch: cfg.epochs });
    }
    let (mae, acc) = fidelity(&heads, &latents, &targets);
    let mut out = SurrogateHeads::new(attach, heads, cap)?;
    out.report = Some(SurrogateReport {
        within_range_mae: mae,
        side_accuracy: acc,
        epochs: cfg.epochs,
        final_loss,
    });
    Ok(out)
}

/// `offset + sum_m z_hat_m(x)`, the disentangled stand-in for the model.
pub struct SurrogateFn<'a> {
    model: &'a MlpModel,
    bank: &'a RangeExpertBank,
    heads: &'a SurrogateHeads,
}

impl<'a> SurrogateFn<'a> {
    pub fn new(model: &'a MlpModel, bank: &'a RangeExpertBank, heads: &'a SurrogateHeads) -> Result<Self> {
        heads.check_model(model, bank)?;
        Ok(SurrogateFn { model, bank, heads })
    }
}

impl ScalarFunction for SurrogateFn<'_> {
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.bank.offset() + self.heads.published(self.model, x)?.iter().sum::<f64>())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Probe {
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateValidation {
    pub within_range_mae: Vec<f64>,
    pub side_accuracy: Vec<f64>,
    /// Clip widths the heads were judged against.
    pub taus: Vec<f64>,
    pub drift_mean: f64,
    pub drift_max: f64,
    /// Mean cosine between exact-Shapley explanations of the model and of the
    /// surrogate, against the dataset mean; `None` when no probe sample has a
    /// non-zero explanation on both sides or `d` is too large.
    pub cosine_mean: Option<f64>,
    pub probes: usize,
}

impl SurrogateValidation {
    pub fn to_record(&self) -> String {
        let mut out = String::from("surrogate validation\n");
        out.push_str("expert,tau,within_range_mae,side_accuracy\n");
        for m in 0..self.taus.len() {
            let _ = writeln!(
                out,
                "{m},{},{},{}",
                self.taus[m], self.within_range_mae[m], self.side_accuracy[m]
            );
        }
        let _ = writeln!(out, "drift_mean={} drift_max={}", self.drift_mean, self.drift_max);
        match self.cosine_mean {
            Some(c) => {
                let _ = writeln!(out, "shapley_cosine_mean={c} probes={}", self.probes);
            }
            None => out.push_str("shapley_cosine_mean=n/a\n"),
        }
        out
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return None;
    }
    Some(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

pub fn validate_surrogate(
    model: &MlpModel,
    bank: &RangeExpertBank,
    heads: &SurrogateHeads,
    dataset: &Dataset,
    probe: Probe,
) -> Result<SurrogateValidation> {
    heads.check_model(model, bank)?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let taus = heads.taus();
    let predictions = model.predict_batch(dataset.features())?;
    let mut latents = Vec::with_capacity(dataset.len());
    let mut drift_sum = 0.0;
    let mut drift_max: f64 = 0.0;
    for (x, &y) in dataset.features().iter().zip(&predictions) {
        let a = heads.latent(model, x)?;
        let published = heads.clip_scores(&heads.scores(&a)?);
        let drift = (bank.offset() + published.iter().sum::<f64>() - y).abs();
        drift_sum += drift;
        drift_max = drift_max.max(drift);
        latents.push(a);
    }
    let targets: Vec<Vec<f64>> = predictions.iter().map(|&y| targets_for(bank, &taus, y)).collect();
    let (mae, acc) = fidelity(heads.heads(), &latents, &targets);

    let d = model.input_dim();
    let mut cos_sum = 0.0;
    let mut cos_n = 0usize;
    if d <= MAX_EXACT_FEATURES && probe.n_samples > 0 {
        let surrogate = SurrogateFn::new(model, bank, heads)?;
        let mean = dataset.feature_mean();
        let mut rng = ChaCha8Rng::seed_from_u64(probe.seed);
        let picks: Vec<usize> = if probe.n_samples >= dataset.len() {
            (0..dataset.len()).collect()
        } else {
            rand::seq::index::sample(&mut rng, dataset.len(), probe.n_samples).into_vec()
        };
        let mut buf = vec![0.0; d];
        for i in picks {
            let x = &dataset.features()[i];
            let phi = exact_multi(d, 2, |mask| {
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = if mask >> k & 1 == 1 { x[k] } else { mean[k] };
                }
                Ok(vec![model.eval(&buf)?, surrogate.eval(&buf)?])
            })?;
            if let Some(c) = cosine(&phi[0], &phi[1]) {
                cos_sum += c;
                cos_n += 1;
            }
        }
    }
    Ok(SurrogateValidation {
        within_range_mae: mae,
        side_accuracy: acc,
        taus,
        drift_mean: drift_sum / dataset.len() as f64,
        drift_max,
        cosine_mean: (cos_n > 0).then(|| cos_sum / cos_n as f64),
        probes: cos_n,
    })
}
