use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            clip_norm: 0.0,
        }
    }
}

/// Adam over every parameter of a store.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor::zeros_like(&p.value)).collect();
        Adam {
            config,
            first: zeros(),
            second: zeros(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies accumulated gradients and returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> f64 {
        self.steps += 1;
        let norm = params
            .iter()
            .flat_map(|(_, p)| p.grad.data().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        let scale = if self.config.clip_norm > 0.0 && norm > self.config.clip_norm {
            self.config.clip_norm / norm
        } else {
            1.0
        };
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let t = self.steps as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let (value, grad) = (p.value.data_mut(), p.grad.data());
            for i in 0..value.len() {
                let g = grad[i] * scale;
                let mi = &mut m.data_mut()[i];
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                let vi = &mut v.data_mut()[i];
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = m.data()[i] / bias1;
                let v_hat = v.data()[i] / bias2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        norm
    }
}

/// Linear warmup to `base` over `warmup` steps, then inverse-square-root
/// decay. `step` counts from 1.
pub fn learning_rate(step: u64, base: f64, warmup: u64) -> f64 {
    let step = step.max(1) as f64;
    if warmup == 0 {
        return base;
    }
    let w = warmup as f64;
    base * (step / w).min((w / step).sqrt())
}
