use crate::error::{check_len, Error, Result};
use crate::target::Differentiable;

/// Integrated gradients along the straight path `baseline -> x`, using the
/// midpoint rule with `steps` nodes.
pub fn integrated_gradients<F: Differentiable + ?Sized>(
    f: &F,
    x: &[f64],
    baseline: &[f64],
    steps: usize,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::Invalid {
            what: "integrated gradients",
            msg: "steps must be at least 1".into(),
        });
    }
    let d = f.input_dim();
    check_len("sample", d, x.len())?;
    check_len("baseline", d, baseline.len())?;
    let delta: Vec<f64> = x.iter().zip(baseline).map(|(a, b)| a - b).collect();
    if delta.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; d]);
    }
    let mut avg = vec![0.0; d];
    let mut point = vec![0.0; d];
    for k in 0..steps {
        let alpha = (k as f64 + 0.5) / steps as f64;
        for ((p, b), dv) in point.iter_mut().zip(baseline).zip(&delta) {
            *p = b + alpha * dv;
        }
        for (a, g) in avg.iter_mut().zip(f.gradient(&point)?) {
            *a += g;
        }
    }
    Ok(avg
        .iter()
        .zip(&delta)
        .map(|(g, dv)| dv * g / steps as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpModel;
    use crate::target::ScalarFunction;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_model_is_exact() {
        let model = MlpModel::linear(&[3.0, -2.0], 1.0).unwrap();
        for steps in [1, 7, 64] {
            let v = integrated_gradients(&model, &[2.0, 0.5], &[-1.0, 1.5], steps).unwrap();
            assert_eq!(v, vec![9.0, 2.0]);
        }
    }

    #[test]
    fn empty_path_is_zero() {
        let model = MlpModel::random(3, &[4], 1, vec![]).unwrap();
        let v = integrated_gradients(&model, &[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3], 16).unwrap();
        assert_eq!(v, vec![0.0; 3]);
    }

    #[test]
    fn zero_steps_rejected() {
        let model = MlpModel::linear(&[1.0], 0.0).unwrap();
        assert!(integrated_gradients(&model, &[1.0], &[0.0], 0).is_err());
    }

    #[test]
    fn completeness_on_relu_nets() {
        // The midpoint rule misses O(1/steps) per kink crossed, an absolute
        // error, so pairs with a tiny output difference are redrawn.
        let mut rng = ChaCha8Rng::seed_from_u64(256);
        let mut worst: f64 = 0.0;
        for seed in 0..100u64 {
            let model = MlpModel::random(4, &[10], seed, vec![]).unwrap();
            let (x, b, diff) = loop {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
                let b: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
                let diff = model.eval(&x).unwrap() - model.eval(&b).unwrap();
                if diff.abs() >= 1.0 {
                    break (x, b, diff);
                }
            };
            let v = integrated_gradients(&model, &x, &b, 256).unwrap();
            let gap = (v.iter().sum::<f64>() - diff).abs();
            worst = worst.max(gap / diff.abs());
        }
        assert!(worst <= 1e-2, "worst relative gap {worst}");
    }
}
