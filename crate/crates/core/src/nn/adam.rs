//! Bias-corrected Adam over a parameter store.

use super::params::ParamStore;
use super::NnError;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Number of apply calls so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let m = store.iter().map(|t| vec![0.0; t.len()]).collect();
        let v = store.iter().map(|t| vec![0.0; t.len()]).collect();
        Self { cfg, m, v, t: 0 }
    }

    /// One update from the accumulated gradients; gradients are zeroed
    /// afterwards. `t` increments exactly once per call.
    pub fn apply(&mut self, store: &mut ParamStore) -> Result<(), NnError> {
        for tensor in store.iter() {
            if tensor.grad.iter().any(|g| !g.is_finite()) {
                return Err(NnError::NonFiniteGradient(tensor.name.clone()));
            }
        }
        self.t += 1;
        let b1t = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for id in 0..store.len() {
            let tensor = store.get_mut(id);
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            for k in 0..tensor.values.len() {
                let g = tensor.grad[k];
                m[k] = self.cfg.beta1 * m[k] + (1.0 - self.cfg.beta1) * g;
                v[k] = self.cfg.beta2 * v[k] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = m[k] / b1t;
                let v_hat = v[k] / b2t;
                tensor.values[k] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
                tensor.grad[k] = 0.0;
            }
        }
        Ok(())
    }
}
