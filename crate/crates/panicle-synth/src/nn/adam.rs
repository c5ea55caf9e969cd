//! Adam optimizer over a subset of a [`Params`] store.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, Params};

/// Adam hyperparameters. The first-moment decay of 0.5 is the GAN-training
/// convention; momentum closer to 1 destabilizes the adversarial game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One optimizer instance, owning first/second moment estimates for the
/// parameters it was built over (a generator's or a discriminator's).
///
/// Moments are stored per owned parameter in registration order so the
/// whole state serializes into a checkpoint and restores bit-exactly.
pub struct Adam {
    config: AdamConfig,
    owned: Vec<ParamId>,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    /// Completed update steps (drives bias correction).
    t: u64,
}

impl Adam {
    /// Builds optimizer state over `owned`, all moments zero.
    pub fn new(config: AdamConfig, params: &Params, owned: Vec<ParamId>) -> Self {
        let m = owned
            .iter()
            .map(|&id| ArrayD::zeros(params.value(id).raw_dim()))
            .collect();
        let v = owned
            .iter()
            .map(|&id| ArrayD::zeros(params.value(id).raw_dim()))
            .collect();
        Adam {
            config,
            owned,
            m,
            v,
            t: 0,
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn owned(&self) -> &[ParamId] {
        &self.owned
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Overrides the learning rate (for decay schedules).
    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one Adam update from `gradients` (indexed by raw parameter
    /// id, as produced by `Tape::param_gradients`). Owned parameters
    /// without a gradient are skipped; their moments do not decay, which
    /// keeps a parameter untouched by a loss exactly stationary.
    pub fn step(&mut self, params: &mut Params, gradients: &[Option<ArrayD<f64>>]) {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (slot, &id) in self.owned.iter().enumerate() {
            let Some(g) = gradients[id.index()].as_ref() else {
                continue;
            };
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            });
            let value = params.value_mut(id);
            ndarray::Zip::from(value)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let m_hat = m / bc1;
                    let v_hat = v / bc2;
                    *p -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                });
        }
    }

    /// Raw state access for checkpointing.
    pub fn state(&self) -> (&[ArrayD<f64>], &[ArrayD<f64>], u64) {
        (&self.m, &self.v, self.t)
    }

    /// Restores moments and step count captured by [`Adam::state`].
    pub fn restore(&mut self, m: Vec<ArrayD<f64>>, v: Vec<ArrayD<f64>>, t: u64) {
        assert_eq!(m.len(), self.owned.len(), "moment count mismatch");
        assert_eq!(v.len(), self.owned.len(), "moment count mismatch");
        for (slot, id) in self.owned.iter().enumerate() {
            assert_eq!(
                m[slot].shape(),
                self.m[slot].shape(),
                "first-moment shape mismatch for parameter {id:?}"
            );
            assert_eq!(
                v[slot].shape(),
                self.v[slot].shape(),
                "second-moment shape mismatch for parameter {id:?}"
            );
        }
        self.m = m;
        self.v = v;
        self.t = t;
    }
}
