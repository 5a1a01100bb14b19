//! First-order adaptive-moment optimizer.

use crate::error::{Result, SurjError};
use crate::numerics::matrix::DenseMatrix;

#[derive(Clone, Debug)]
pub struct OptimState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
}

impl OptimState {
    pub fn new(lr: f64, params: &[DenseMatrix]) -> Self {
        OptimState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params
                .iter()
                .map(|p| DenseMatrix::zeros(p.rows, p.cols))
                .collect(),
            v: params
                .iter()
                .map(|p| DenseMatrix::zeros(p.rows, p.cols))
                .collect(),
        }
    }

    pub fn with_defaults(params: &[DenseMatrix]) -> Self {
        Self::new(1e-3, params)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update; params and grads must match the layout
    /// the state was created with.
    pub fn step(&mut self, params: &mut [DenseMatrix], grads: &[DenseMatrix]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(SurjError::Shape("optim_step: parameter count mismatch".into()));
        }
        for g in grads {
            if !g.is_finite() {
                return Err(SurjError::Numerical("optim_step: non-finite gradient".into()));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if !p.same_shape(g) || !p.same_shape(m) {
                return Err(SurjError::Shape("optim_step: shape mismatch".into()));
            }
            for i in 0..p.data.len() {
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * g.data[i];
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * g.data[i] * g.data[i];
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
