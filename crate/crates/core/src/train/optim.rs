use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: applied to the weights directly, not through the moments.
    pub weight_decay: f64,
    pub max_epoch: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 2e-4,
            max_epoch: 1500,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::validation(format!("learning rate {} must be positive", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::validation(format!("{name}={b} outside [0, 1)")));
            }
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::validation("eps must be positive and weight_decay nonnegative"));
        }
        Ok(())
    }
}

/// `0.5 · lr0 · (1 + cos(π t / T))`.
pub fn cosine_lr(epoch: usize, max_epoch: usize, lr0: f64) -> Result<f64> {
    if max_epoch == 0 {
        return Err(Error::validation("cosine schedule needs max_epoch > 0"));
    }
    if epoch > max_epoch {
        return Err(Error::validation(format!("epoch {epoch} beyond max_epoch {max_epoch}")));
    }
    let progress = epoch as f64 / max_epoch as f64;
    Ok(0.5 * lr0 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Bias-corrected Adam with decoupled weight decay on one flat buffer.
/// `step` is the 1-based step count after incrementing.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(value: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], step: u64, lr: f64, cfg: &OptimConfig) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..value.len() {
        value[i] -= lr * cfg.weight_decay * value[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        value[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self { m: zeros(), v: zeros(), t: 0 }
    }

    /// One update of every parameter from its accumulated gradient.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64, cfg: &OptimConfig) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::validation("optimizer state does not match parameter store"));
        }
        self.t += 1;
        for (k, p) in params.iter_mut().enumerate() {
            if self.m[k].len() != p.value.len() {
                return Err(Error::validation(format!("optimizer state shape differs for {}", p.id)));
            }
            let grad = p.grad.data().to_vec();
            adam_update(p.value.data_mut(), &grad, &mut self.m[k], &mut self.v[k], self.t, lr, cfg);
        }
        Ok(())
    }
}
