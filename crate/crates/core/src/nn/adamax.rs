//! Adamax: Adam with the second moment replaced by an exponentially weighted
//! infinity norm.
//!
//! ```text
//! g ← ∇ + λ·θ
//! m ← β1·m + (1 − β1)·g
//! u ← max(β2·u, |g|)
//! θ ← θ − lr / (1 − β1^t) · m / (u + ε)
//! ```
//!
//! The learning rate is multiplied by `decay` each time the caller signals an
//! epoch boundary through [`AdamaxState::end_epoch`].

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamaxConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub decay: f64,
}

impl Default for AdamaxConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            decay: 0.97,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamaxState {
    pub config: AdamaxConfig,
    pub step: u64,
    pub lr: f64,
    first_moment: Vec<Matrix>,
    inf_norm: Vec<Matrix>,
}

impl AdamaxState {
    pub fn new(config: AdamaxConfig, store: &ParamStore) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(Error::invalid("betas must lie in [0, 1)"));
        }
        if config.weight_decay < 0.0 {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        let zeros: Vec<Matrix> = store
            .entries()
            .iter()
            .map(|e| Array2::zeros(e.value.raw_dim()))
            .collect();
        Ok(Self {
            config,
            step: 0,
            lr: config.lr,
            first_moment: zeros.clone(),
            inf_norm: zeros,
        })
    }

    /// Applies one update. `grads` are gradients of the loss being minimised,
    /// in store order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Matrix]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::invalid("gradient count does not match parameters"));
        }
        for (id, g) in store.ids().zip(grads) {
            if g.iter().any(|v| !v.is_finite()) {
                let name = store.name(id).to_string();
                return Err(Error::Training {
                    message: format!("non-finite gradient for `{name}`"),
                    parameter: Some(name),
                    history: Vec::new(),
                });
            }
        }
        self.step += 1;
        let c = self.config;
        let step_size = self.lr / (1.0 - c.beta1.powi(self.step.min(i32::MAX as u64) as i32));
        let ids: Vec<_> = store.ids().collect();
        for ((id, g), (m, u)) in ids
            .into_iter()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.inf_norm.iter_mut()))
        {
            let theta = store.value_mut(id);
            Zip::from(theta)
                .and(g)
                .and(m)
                .and(u)
                .for_each(|theta, &g, m, u| {
                    let g = g + c.weight_decay * *theta;
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *u = (c.beta2 * *u).max(g.abs());
                    *theta -= step_size * *m / (*u + c.eps);
                });
        }
        Ok(())
    }

    pub fn end_epoch(&mut self) {
        self.lr *= self.config.decay;
    }
}
