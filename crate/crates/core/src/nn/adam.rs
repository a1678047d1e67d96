//! Adam optimizer over a flat view of a parameter set.
//!
//! Moment vectors are stored in the same fixed visit order the parameter set
//! exposes, so optimizer state serializes alongside the parameters and a
//! restored run continues bit-identically.

use super::ParamSet;
use crate::error::{Error, Result};

pub struct AdamOptimizer {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    /// Number of completed steps (bias correction uses `step + 1`).
    step_count: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamOptimizer {
    /// Adam with the conventional defaults `beta1 = 0.9`, `beta2 = 0.999`,
    /// `eps = 1e-8`.
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update from the accumulated gradients. Moment vectors are
    /// sized on first use; afterwards the parameter count must not change.
    pub fn step(&mut self, params: &mut impl ParamSet) -> Result<()> {
        let total = params.param_count();
        if self.m.is_empty() {
            self.m = vec![0.0; total];
            self.v = vec![0.0; total];
        } else if self.m.len() != total {
            return Err(Error::DimensionMismatch {
                context: "AdamOptimizer::step",
                expected: self.m.len(),
                actual: total,
            });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut offset = 0;
        params.visit_params(&mut |p, g| {
            for i in 0..p.len() {
                let mi = &mut m[offset + i];
                let vi = &mut v[offset + i];
                *mi = b1 * *mi + (1.0 - b1) * g[i];
                *vi = b2 * *vi + (1.0 - b2) * g[i] * g[i];
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            offset += p.len();
        });
        Ok(())
    }

    /// Serialized state: `(lr, beta1, beta2, eps, step_count, m, v)`.
    pub fn state(&self) -> (f64, f64, f64, f64, u64, &[f64], &[f64]) {
        (
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
            self.step_count,
            &self.m,
            &self.v,
        )
    }

    /// Rebuilds an optimizer from serialized state.
    pub fn from_state(
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step_count: u64,
        m: Vec<f64>,
        v: Vec<f64>,
    ) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer moment lengths disagree: {} vs {}",
                m.len(),
                v.len()
            )));
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
            step_count,
            m,
            v,
        })
    }
}
