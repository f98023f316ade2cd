//! Scalar functions of the model input: the things attribution methods explain.

use crate::error::{check_len, Result};
use crate::nn::MlpModel;

pub trait ScalarFunction: Sync {
    fn input_dim(&self) -> usize;

    fn eval(&self, x: &[f64]) -> Result<f64>;
}

/// A scalar function that also exposes its input gradient.
pub trait Differentiable: ScalarFunction {
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl ScalarFunction for MlpModel {
    fn input_dim(&self) -> usize {
        MlpModel::input_dim(self)
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        self.predict(x)
    }
}

impl Differentiable for MlpModel {
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.input_gradient(x)
    }
}

impl<T: ScalarFunction + ?Sized> ScalarFunction for &T {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        (**self).eval(x)
    }
}

impl<T: Differentiable + ?Sized> Differentiable for &T {
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).gradient(x)
    }
}

/// Wraps closures as a scalar function, mostly for tests and ad-hoc games.
pub struct FnTarget<F, G = fn(&[f64]) -> Vec<f64>> {
    dim: usize,
    f: F,
    grad: Option<G>,
}

impl<F> FnTarget<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnTarget { dim, f, grad: None }
    }
}

impl<F, G> FnTarget<F, G>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    pub fn with_gradient(dim: usize, f: F, grad: G) -> Self {
        FnTarget {
            dim,
            f,
            grad: Some(grad),
        }
    }
}

impl<F, G> ScalarFunction for FnTarget<F, G>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Sync,
{
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        check_len("function input", self.dim, x.len())?;
        Ok((self.f)(x))
    }
}

impl<F, G> Differentiable for FnTarget<F, G>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("function input", self.dim, x.len())?;
        match &self.grad {
            Some(g) => Ok(g(x)),
            None => Err(crate::Error::Config("closure target has no gradient".into())),
        }
    }
}
