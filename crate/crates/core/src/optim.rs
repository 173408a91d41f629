//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::autodiff::Params;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplicative learning-rate decay applied after every step; `1.0`
    /// keeps the rate constant.
    pub decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub config: AdamConfig,
    lr: f64,
    m: Params,
    v: Params,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &Params) -> Result<Self> {
        let c = &config;
        if !(c.lr > 0.0) || !(0.0..1.0).contains(&c.beta1) || !(0.0..1.0).contains(&c.beta2) || !(c.eps > 0.0) {
            return Err(Error::invalid(format!("bad Adam hyperparameters {c:?}")));
        }
        let zeros = |p: &Params| -> Params {
            p.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect()
        };
        Ok(Self {
            step: 0,
            lr: config.lr,
            config,
            m: zeros(params),
            v: zeros(params),
        })
    }

    pub fn current_lr(&self) -> f64 {
        self.lr
    }

    /// One Adam update. Parameters without a gradient entry are left alone.
    pub fn step(&mut self, params: &mut Params, grads: &Params) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter {name:?}")))?;
            if p.shape() != g.shape() || self.m.get(name).map(|m| m.shape()) != Some(g.shape()) {
                return Err(Error::shape("adam", format!("parameter {name:?}: {:?} vs {:?}", p.shape(), g.shape())));
            }
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, g) in grads {
            let p = params.get_mut(name).unwrap().data_mut();
            let m = self.m.get_mut(name).unwrap().data_mut();
            let v = self.v.get_mut(name).unwrap().data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
            if !p.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(format!("adam update of {name:?}")));
            }
        }
        self.lr *= c.decay;
        Ok(())
    }
}
