use serde::{Deserialize, Serialize};

use super::Params;
use crate::error::TensorError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled decay strength; each step shrinks parameters by
    /// `learning_rate * weight_decay`.
    pub weight_decay: f64,
    /// Global L2 norm the gradient is clipped to before the update.
    pub grad_clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 0.5, grad_clip_norm: 10.0 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), String> {
        let pos = [("learning_rate", self.learning_rate), ("epsilon", self.epsilon), ("grad_clip_norm", self.grad_clip_norm)];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("adam.{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(format!("adam betas must lie in [0, 1), got {} / {}", self.beta1, self.beta2));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(format!("adam.weight_decay must be non-negative, got {}", self.weight_decay));
        }
        Ok(())
    }
}

/// Adam with global-norm clipping and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

/// What one optimizer step did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub grad_norm: f64,
    /// Factor applied to the gradient by clipping (1 when not clipped).
    pub clip_scale: f64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &Params) -> Self {
        let m = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect::<Vec<_>>();
        Self { cfg, v: m.clone(), m, t: 0 }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Applies one update from the gradients stored on `params`, then zeroes them.
    /// Parameters without a gradient are treated as having zero gradient.
    pub fn step(&mut self, params: &mut Params) -> Result<StepInfo, TensorError> {
        let mut sq = 0.0;
        for (name, t) in params.iter() {
            if let Some(g) = t.grad() {
                let s: f64 = g.iter().map(|x| x * x).sum();
                if !s.is_finite() {
                    return Err(TensorError::NonFiniteGradient(name.to_string()));
                }
                sq += s;
            }
        }
        let grad_norm = sq.sqrt();
        let clip_scale = if grad_norm > self.cfg.grad_clip_norm { self.cfg.grad_clip_norm / grad_norm } else { 1.0 };

        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let decay = c.learning_rate * c.weight_decay;
        for (i, (_, t)) in params.tensors_mut().enumerate() {
            let grad = t.grad().map(|g| g.to_vec());
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = t.data_mut();
            for j in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[j] * clip_scale);
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                data[j] -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon) + decay * data[j];
            }
            t.zero_grad();
        }
        Ok(StepInfo { grad_norm, clip_scale })
    }
}
