//! AdamW with decoupled weight decay.

use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Per-parameter first/second moment state plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: OptimizerConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamW {
    pub fn new(config: OptimizerConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One decoupled-decay update:
    /// `p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)`.
    /// Parameters whose gradient slot is `None` are treated as zero-gradient
    /// (they still decay). `lr_scale` applies a schedule multiplier.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<&Tensor>], lr_scale: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let c = &self.config;
        let lr = c.lr * lr_scale;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let p = params[i].data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let g = grads[i].map_or(0.0, |t| t.data()[j]);
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * p[j]);
            }
        }
    }
}
