//! Layer-wise relevance propagation with the epsilon rule.
//!
//! Relevance arriving at neuron `k` of a dense layer is redistributed to its
//! inputs in proportion to their contributions `a_j w_jk` to the neuron's
//! pre-activation `z_k`. The bias counts as a contribution from a constant
//! input, so it stays in the denominator:
//!
//! ```text
//! R_j = sum_k a_j w_jk / (z_k + eps * sign(z_k)) * R_k
//! ```
//!
//! Biases keep the relevance share they would receive, so the rule is exactly
//! conservative only on bias-free networks.

use crate::disentangle::SurrogateHeads;
use crate::error::{check_len, Error, Result};
use crate::nn::{DenseLayer, MlpModel};
use crate::query::Query;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrpEpsilon {
    Absolute(f64),
    /// Multiple of the mean absolute denominator of each layer.
    Relative(f64),
}

impl Default for LrpEpsilon {
    fn default() -> Self {
        LrpEpsilon::Relative(1e-6)
    }
}

impl LrpEpsilon {
    fn resolve(self, denominators: &[f64]) -> f64 {
        match self {
            LrpEpsilon::Absolute(e) => e,
            LrpEpsilon::Relative(r) => {
                let n = denominators.len().max(1) as f64;
                r * denominators.iter().map(|z| z.abs()).sum::<f64>() / n
            }
        }
    }

    fn validate(self) -> Result<()> {
        let v = match self {
            LrpEpsilon::Absolute(e) | LrpEpsilon::Relative(e) => e,
        };
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::Invalid {
                what: "lrp epsilon",
                msg: format!("must be positive, got {v}"),
            })
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum LrpTarget<'a> {
    ModelOutput,
    Expert(usize),
    Query(&'a Query),
}

#[inline]
fn stabilize(z: f64, eps: f64) -> f64 {
    if z >= 0.0 {
        z + eps
    } else {
        z - eps
    }
}

/// Redistributes `relevance` (one entry per output unit of `layer`) onto the
/// layer's inputs.
fn propagate_dense(layer: &DenseLayer, input: &[f64], pre: &[f64], relevance: &[f64], eps: LrpEpsilon) -> Vec<f64> {
    let e = eps.resolve(pre);
    let mut out = vec![0.0; layer.cols()];
    for (k, (&r, &z)) in relevance.iter().zip(pre).enumerate() {
        if r == 0.0 {
            continue;
        }
        let s = r / stabilize(z, e);
        for (o, (w, a)) in out.iter_mut().zip(layer.row(k).iter().zip(input)) {
            *o += a * w * s;
        }
    }
    out
}

/// Input relevances and the value of the explained scalar.
pub(crate) fn lrp_values(
    model: &MlpModel,
    heads: Option<&SurrogateHeads>,
    x: &[f64],
    target: LrpTarget<'_>,
    eps: LrpEpsilon,
) -> Result<(Vec<f64>, f64)> {
    eps.validate()?;
    let trace = model.forward(x)?;
    let layers = model.layers();

    let (mut relevance, start, explained) = match target {
        LrpTarget::ModelOutput => (vec![trace.output], layers.len(), trace.output),
        LrpTarget::Expert(_) | LrpTarget::Query(_) => {
            let heads = heads.ok_or_else(|| {
                Error::Config(
                    "LRP of an expert or query needs fitted surrogate heads (run fit-surrogate first)".into(),
                )
            })?;
            let weights: Vec<f64> = match target {
                LrpTarget::Expert(m) => {
                    if m >= heads.len() {
                        return Err(Error::IndexOutOfRange {
                            index: m,
                            len: heads.len(),
                        });
                    }
                    (0..heads.len()).map(|k| if k == m { 1.0 } else { 0.0 }).collect()
                }
                LrpTarget::Query(q) => {
                    check_len("query weights", heads.len(), q.len())?;
                    q.weights().to_vec()
                }
                LrpTarget::ModelOutput => unreachable!(),
            };
            let attach = heads.attach_layer();
            let latent = if attach == 0 {
                trace.input.as_slice()
            } else {
                trace.post[attach - 1].as_slice()
            };
            let scores = heads.scores(latent)?;
            let clipped = heads.clip_scores(&scores);
            let e = eps.resolve(&scores);
            let mut rel = vec![0.0; latent.len()];
            let mut explained = 0.0;
            for (m, head) in heads.heads().iter().enumerate() {
                // relevance entering head m is its published (clipped) value
                let top = weights[m] * clipped[m];
                explained += top;
                if top == 0.0 {
                    continue;
                }
                let s = top / stabilize(scores[m], e);
                for (r, (w, a)) in rel.iter_mut().zip(head.weights.iter().zip(latent)) {
                    *r += a * w * s;
                }
            }
            (rel, attach, explained)
        }
    };

    for l in (0..start).rev() {
        relevance = propagate_dense(&layers[l], trace.layer_input(l), &trace.pre[l], &relevance, eps);
    }
    Ok((relevance, explained))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    #[test]
    fn single_linear_layer_gives_products() {
        let w = [0.5, -2.0, 3.0];
        let model = MlpModel::linear(&w, 0.0).unwrap();
        let x = [2.0, 1.0, -1.0];
        let (r, y) = lrp_values(&model, None, &x, LrpTarget::ModelOutput, LrpEpsilon::Absolute(1e-12)).unwrap();
        for j in 0..3 {
            assert!((r[j] - w[j] * x[j]).abs() < 1e-9);
        }
        assert_eq!(y, -4.0);
    }

    #[test]
    fn zero_input_zero_relevance() {
        let model = MlpModel::random(4, &[6, 5], 9, vec![]).unwrap();
        let (r, _) = lrp_values(&model, None, &[0.0; 4], LrpTarget::ModelOutput, LrpEpsilon::default()).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conservative_on_bias_free_relu_net() {
        for seed in 0..20 {
            let model = MlpModel::random(5, &[16, 8], seed, vec![]).unwrap();
            let x: Vec<f64> = (0..5).map(|i| ((i as u64 * 13 + seed) % 7) as f64 / 3.0 - 1.0).collect();
            let (r, y) = lrp_values(&model, None, &x, LrpTarget::ModelOutput, LrpEpsilon::Absolute(1e-9)).unwrap();
            let sum: f64 = r.iter().sum();
            assert!((sum - y).abs() <= 1e-6 * y.abs().max(1e-12), "seed {seed}: {sum} vs {y}");
        }
    }

    #[test]
    fn bias_absorbs_relevance() {
        let hidden = DenseLayer::from_rows(&[vec![1.0]], vec![1.0], Activation::Relu).unwrap();
        let out = DenseLayer::from_rows(&[vec![1.0]], vec![0.0], Activation::Identity).unwrap();
        let model = MlpModel::new(1, vec![hidden, out], vec![]).unwrap();
        let (r, y) = lrp_values(&model, None, &[1.0], LrpTarget::ModelOutput, LrpEpsilon::Absolute(1e-12)).unwrap();
        assert_eq!(y, 2.0);
        assert!((r[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn expert_target_requires_heads() {
        let model = MlpModel::linear(&[1.0], 0.0).unwrap();
        let r = lrp_values(&model, None, &[1.0], LrpTarget::Expert(0), LrpEpsilon::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
