//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad Adam settings {self:?}")))
        }
    }
}

/// Optimizer state over a fixed subset of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    params: Vec<ParamId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Tracks every parameter in `store`.
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        Self::for_params(config, store, (0..store.len()).collect())
    }

    pub fn for_params(config: AdamConfig, store: &ParamStore, params: Vec<ParamId>) -> Self {
        let m = params
            .iter()
            .map(|&id| Tensor::zeros(store.get(id).shape()))
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState {
            config,
            step: 0,
            params,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    /// Applies one update. Gradients are validated for every tracked
    /// parameter before anything is written.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for &id in &self.params {
            let g = grads.get(id);
            if g.shape() != store.get(id).shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "gradient {:?} for parameter `{}` {:?}",
                        g.shape(),
                        store.name(id),
                        store.get(id).shape()
                    ),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient {
                    param: store.name(id).to_string(),
                });
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (slot, &id) in self.params.iter().enumerate() {
            let g = grads.get(id).data();
            let m = self.m[slot].data_mut();
            let v = self.v[slot].data_mut();
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
