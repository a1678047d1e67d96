//! Diagonal-Gaussian action distribution with state-independent learnable
//! log standard deviations.
//!
//! The policy network outputs the mean; this head owns the `log_std` vector,
//! samples actions, and provides exact log-densities, entropy, and the
//! partial derivatives PPO updates need.

use rand::Rng;

use super::ParamSet;
use crate::error::{Error, Result};
use crate::rng::normal;

const LOG_TAU: f64 = 1.837_877_066_409_345_5; // ln(2*pi)

pub struct GaussianHead {
    log_std: Vec<f64>,
    grad_log_std: Vec<f64>,
}

impl GaussianHead {
    /// Head for `dim`-dimensional actions with every component's log standard
    /// deviation set to `init_log_std`.
    pub fn new(dim: usize, init_log_std: f64) -> Self {
        Self {
            log_std: vec![init_log_std; dim],
            grad_log_std: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn set_log_std(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.log_std.len() {
            return Err(Error::DimensionMismatch {
                context: "GaussianHead::set_log_std",
                expected: self.log_std.len(),
                actual: values.len(),
            });
        }
        self.log_std.copy_from_slice(values);
        Ok(())
    }

    fn check(&self, mean: &[f64], action: &[f64]) -> Result<()> {
        if mean.len() != self.log_std.len() {
            return Err(Error::DimensionMismatch {
                context: "GaussianHead mean",
                expected: self.log_std.len(),
                actual: mean.len(),
            });
        }
        if action.len() != self.log_std.len() {
            return Err(Error::DimensionMismatch {
                context: "GaussianHead action",
                expected: self.log_std.len(),
                actual: action.len(),
            });
        }
        Ok(())
    }

    /// Draws `mean + std * eps` with `eps` standard normal per component.
    pub fn sample(&self, mean: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        self.check(mean, mean)?;
        Ok(mean
            .iter()
            .zip(self.log_std.iter())
            .map(|(&m, &ls)| m + ls.exp() * normal(rng))
            .collect())
    }

    /// Exact log-density of `action` under `N(mean, diag(std^2))`:
    /// `sum_i [ -(a_i - mu_i)^2 / (2 sigma_i^2) - log sigma_i - log(2 pi)/2 ]`.
    pub fn log_prob(&self, mean: &[f64], action: &[f64]) -> Result<f64> {
        self.check(mean, action)?;
        let mut lp = 0.0;
        for ((&m, &a), &ls) in mean.iter().zip(action.iter()).zip(self.log_std.iter()) {
            let sigma = ls.exp();
            let d = (a - m) / sigma;
            lp += -0.5 * d * d - ls - 0.5 * LOG_TAU;
        }
        Ok(lp)
    }

    /// Differential entropy: `sum_i [ log sigma_i + (1 + log(2 pi)) / 2 ]`.
    /// Independent of the mean.
    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|&ls| ls + 0.5 * (1.0 + LOG_TAU))
            .sum()
    }

    /// `d log_prob / d mean_i = (a_i - mu_i) / sigma_i^2`, written into `out`.
    pub fn log_prob_grad_mean(&self, mean: &[f64], action: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(mean, action)?;
        for (i, o) in out.iter_mut().enumerate() {
            let sigma = self.log_std[i].exp();
            *o = (action[i] - mean[i]) / (sigma * sigma);
        }
        Ok(())
    }

    /// Adds `coeff * d log_prob / d log_std` to the gradient accumulator,
    /// where `d log_prob / d log_std_i = (a_i - mu_i)^2 / sigma_i^2 - 1`.
    pub fn accumulate_log_prob_grad_log_std(
        &mut self,
        mean: &[f64],
        action: &[f64],
        coeff: f64,
    ) -> Result<()> {
        self.check(mean, action)?;
        for i in 0..self.log_std.len() {
            let sigma = self.log_std[i].exp();
            let d = (action[i] - mean[i]) / sigma;
            self.grad_log_std[i] += coeff * (d * d - 1.0);
        }
        Ok(())
    }

    /// Adds `coeff * d entropy / d log_std` (= `coeff` per component) to the
    /// gradient accumulator.
    pub fn accumulate_entropy_grad_log_std(&mut self, coeff: f64) {
        for g in self.grad_log_std.iter_mut() {
            *g += coeff;
        }
    }
}

impl ParamSet for GaussianHead {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        f(&mut self.log_std, &mut self.grad_log_std);
    }
}
