//! Adam with bias correction.

use super::{Tensor, TensorError};

/// First/second moment buffers plus the shared step counter for one parameter
/// group. Buffers are positional: `step` must always receive the same
/// parameters in the same order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Moments start at zero. Defaults: beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn new(params: &[&Tensor], learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update: reads each parameter's gradient, applies the bias-corrected
    /// Adam rule in place, then zeroes the gradient. Every parameter must have
    /// a gradient buffer (harvest first), or `MissingGrad` fires before any
    /// parameter is touched.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<(), TensorError> {
        if params.len() != self.m.len() {
            return Err(TensorError::InvalidArg {
                op: "adam_step",
                msg: format!("state tracks {} parameters, got {}", self.m.len(), params.len()),
            });
        }
        for (index, p) in params.iter().enumerate() {
            match p.grad() {
                Some(g) if g.len() == p.numel() => {}
                _ => return Err(TensorError::MissingGrad { index }),
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (index, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[index];
            let v = &mut self.v[index];
            let grad = p.grad().expect("checked above").to_vec();
            let data = p.data_mut();
            for k in 0..grad.len() {
                let g = grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                data[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            p.zero_grad();
        }
        Ok(())
    }
}
