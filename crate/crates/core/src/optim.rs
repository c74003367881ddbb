//! Adam with bias correction.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::params::ParameterStore;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// First moment of `name`, if it has been updated.
    pub fn moment(&self, name: &str) -> Option<&[f64]> {
        self.m.get(name).map(Vec::as_slice)
    }

    /// Applies one update. Parameters absent from `grads` are left alone.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &BTreeMap<String, Vec<f32>>) -> Result<(), Error> {
        self.t += 1;
        let c = self.cfg;
        let t = self.t as i32;
        let bc1 = 1.0 - libm::pow(c.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, t as f64);
        for (name, grad) in grads {
            let p = store.get_mut(name).ok_or_else(|| Error::MissingParam(name.clone()))?;
            if p.numel() != grad.len() {
                return Err(Error::Config(alloc::format!("gradient for `{}` has {} entries", name, grad.len())));
            }
            let m = self.m.entry(name.to_string()).or_insert_with(|| alloc::vec![0.0; grad.len()]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| alloc::vec![0.0; grad.len()]);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = grad[i] as f64;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let update = c.lr * (m[i] / bc1) / (libm::sqrt(v[i] / bc2) + c.eps);
                *w -= update as f32;
            }
        }
        Ok(())
    }
}
