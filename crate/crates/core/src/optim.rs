//! Adam and the per-epoch exponential learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Per-epoch multiplier that decays the learning rate by 100x over 300 epochs.
pub fn default_decay_per_epoch() -> f64 {
    (0.01f64).powf(1.0 / 300.0)
}

#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(params: &[&Tensor]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed between steps");
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (k, p) in params.iter_mut().enumerate() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (((pv, g), mv), vv) in p.data_mut().iter_mut().zip(grads[k].data()).zip(m).zip(v) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * g;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * g * g;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Optimizer settings shared by every training loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub decay_per_epoch: f64,
}

impl OptimConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay_per_epoch.powi(epoch as i32)
    }

    /// Published large-scale schedule: lr 5e-5, 300 epochs, batch 256.
    pub fn reference() -> Self {
        Self { lr: 5e-5, epochs: 300, batch_size: 256, decay_per_epoch: default_decay_per_epoch() }
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { lr: 1e-3, epochs: 200, batch_size: 128, decay_per_epoch: 1.0 }
    }
}
