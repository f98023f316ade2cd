use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::nn::MlpModel;

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineSpec {
    Fixed(Vec<f64>),
    DatasetMean,
    /// Dataset samples whose prediction lies within `delta` of `reference`.
    Conditional {
        reference: f64,
        delta: f64,
        draws: usize,
        seed: u64,
    },
}

impl fmt::Display for BaselineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineSpec::Fixed(v) => write!(
                f,
                "fixed:{}",
                v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
            ),
            BaselineSpec::DatasetMean => f.write_str("mean"),
            BaselineSpec::Conditional {
                reference,
                delta,
                draws,
                seed,
            } => write!(f, "conditional:ref={reference},delta={delta},draws={draws},seed={seed}"),
        }
    }
}

/// Dataset samples with their model predictions, for repeated baseline draws.
#[derive(Debug, Clone)]
pub struct BaselinePool {
    features: Vec<Vec<f64>>,
    predictions: Vec<f64>,
    mean: Vec<f64>,
}

impl BaselinePool {
    pub fn new(dataset: &Dataset, model: &MlpModel) -> Result<Self> {
        check_len("dataset features", model.input_dim(), dataset.dim())?;
        Ok(BaselinePool {
            features: dataset.features().to_vec(),
            predictions: model.predict_batch(dataset.features())?,
            mean: dataset.feature_mean(),
        })
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    /// Indices of samples whose prediction is within `delta` of `reference`.
    pub fn qualifying(&self, reference: f64, delta: f64) -> Vec<usize> {
        self.predictions
            .iter()
            .enumerate()
            .filter(|(_, p)| (*p - reference).abs() <= delta)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn resolve(&self, spec: &BaselineSpec) -> Result<Vec<Vec<f64>>> {
        match spec {
            BaselineSpec::Fixed(v) => {
                check_len("fixed baseline", self.mean.len(), v.len())?;
                Ok(vec![v.clone()])
            }
            BaselineSpec::DatasetMean => {
                if self.features.is_empty() {
                    return Err(Error::EmptyDataset);
                }
                Ok(vec![self.mean.clone()])
            }
            &BaselineSpec::Conditional {
                reference,
                delta,
                draws,
                seed,
            } => {
                if !(delta > 0.0) || draws == 0 {
                    return Err(Error::Invalid {
                        what: "conditional baseline",
                        msg: "delta must be positive and draws at least 1".into(),
                    });
                }
                let pool = self.qualifying(reference, delta);
                if pool.is_empty() {
                    let nearest = self
                        .predictions
                        .iter()
                        .copied()
                        .min_by(|a, b| (a - reference).abs().total_cmp(&(b - reference).abs()))
                        .ok_or(Error::EmptyDataset)?;
                    return Err(Error::NoCandidate {
                        target: reference,
                        delta,
                        nearest,
                    });
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok((0..draws)
                    .map(|_| self.features[pool[rng.random_range(0..pool.len())]].clone())
                    .collect())
            }
        }
    }
}

/// Concrete baseline vectors for `spec`.
pub fn resolve_baseline(spec: &BaselineSpec, dataset: &Dataset, model: &MlpModel) -> Result<Vec<Vec<f64>>> {
    BaselinePool::new(dataset, model)?.resolve(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Dataset, MlpModel) {
        let d = Dataset::new(
            vec![vec![0.1], vec![0.5], vec![0.9]],
            vec![0.0; 3],
            vec!["a".into()],
        )
        .unwrap();
        (d, MlpModel::linear(&[1.0], 0.0).unwrap())
    }

    #[test]
    fn fixed_is_identity() {
        let (d, m) = toy();
        assert_eq!(resolve_baseline(&BaselineSpec::Fixed(vec![0.3]), &d, &m).unwrap(), vec![vec![0.3]]);
    }

    #[test]
    fn mean_baseline() {
        let (d, m) = toy();
        let b = resolve_baseline(&BaselineSpec::DatasetMean, &d, &m).unwrap();
        assert!((b[0][0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn conditional_single_qualifier() {
        let (d, m) = toy();
        let spec = BaselineSpec::Conditional {
            reference: 0.5,
            delta: 0.05,
            draws: 4,
            seed: 1,
        };
        assert_eq!(resolve_baseline(&spec, &d, &m).unwrap(), vec![vec![0.5]; 4]);
    }

    #[test]
    fn conditional_without_candidates() {
        let (d, m) = toy();
        let spec = BaselineSpec::Conditional {
            reference: 0.3,
            delta: 0.05,
            draws: 1,
            seed: 1,
        };
        match resolve_baseline(&spec, &d, &m) {
            Err(Error::NoCandidate { nearest, .. }) => assert!(nearest == 0.1 || nearest == 0.5),
            other => panic!("unexpected {other:?}"),
        }
    }
}
