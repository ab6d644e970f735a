//! Adaptive-moment optimizer with decoupled weight decay.

use alloc::vec::Vec;

use crate::encoder::ParamTensors;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: ParamTensors,
    v: ParamTensors,
    step: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, like: &ParamTensors) -> Self {
        Self {
            cfg,
            m: ParamTensors::zeros_like(like),
            v: ParamTensors::zeros_like(like),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update and returns the L2 norm of the parameter change.
    pub fn step(&mut self, params: &mut ParamTensors, grads: &ParamTensors) -> f64 {
        self.step += 1;
        let AdamWConfig {
            learning_rate: lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let t = self.step as i32;
        let bias1 = 1.0 - libm::pow(beta1, f64::from(t));
        let bias2 = 1.0 - libm::pow(beta2, f64::from(t));
        let mut change_sq = 0.0;
        let blocks: Vec<_> = params
            .blocks_mut()
            .into_iter()
            .zip(grads.blocks())
            .zip(self.m.blocks_mut().into_iter().zip(self.v.blocks_mut()))
            .collect();
        for ((theta, g), (m, v)) in blocks {
            for i in 0..theta.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                let delta = lr * (m_hat / (libm::sqrt(v_hat) + eps) + weight_decay * theta[i]);
                theta[i] -= delta;
                change_sq += delta * delta;
            }
        }
        libm::sqrt(change_sq)
    }
}
