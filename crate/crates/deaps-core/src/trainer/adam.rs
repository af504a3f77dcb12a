//! Adam optimizer over named autograd variables.
//!
//! State is keyed by parameter name so it can be checkpointed and
//! restored exactly. Weight decay is the classic L2-into-gradient form
//! and skips biases and normalization scales.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1.5e-6,
        }
    }
}

pub struct Adam {
    pub cfg: AdamConfig,
    /// Completed steps; drives bias correction.
    pub t: usize,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Decay applies to weight matrices and embeddings, not to biases or
    /// to normalization scale/shift parameters.
    fn decays(name: &str) -> bool {
        !(name.ends_with(".b") || name.ends_with(".gamma") || name.ends_with(".beta"))
    }

    /// One update over every parameter that received a gradient;
    /// parameters absent from the store are left untouched.
    pub fn step(&mut self, params: &[(String, Var)], grads: &GradStore) -> Result<()> {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);

        for (name, var) in params {
            let Some(grad) = grads.get(var) else {
                continue;
            };
            let mut g = grad.clone();
            if self.cfg.weight_decay > 0.0 && Self::decays(name) {
                g = (g + (var.as_tensor().detach() * self.cfg.weight_decay)?)?;
            }

            let m_new = match self.m.get(name) {
                Some(m) => ((m * self.cfg.beta1)? + (&g * (1.0 - self.cfg.beta1))?)?,
                None => (&g * (1.0 - self.cfg.beta1))?,
            };
            let g2 = g.sqr()?;
            let v_new = match self.v.get(name) {
                Some(v) => ((v * self.cfg.beta2)? + (&g2 * (1.0 - self.cfg.beta2))?)?,
                None => (&g2 * (1.0 - self.cfg.beta2))?,
            };

            let m_hat = (&m_new / bc1)?;
            let v_hat = (&v_new / bc2)?;
            let denom = (v_hat.sqrt()? + self.cfg.eps)?;
            let update = ((m_hat / denom)? * self.cfg.lr)?;
            var.set(&(var.as_tensor() - update)?.detach())?;

            // Detached, or the stored moments would keep every step's
            // autograd graph alive through the gradient tensors and grow
            // memory without bound over a long run.
            self.m.insert(name.clone(), m_new.detach());
            self.v.insert(name.clone(), v_new.detach());
        }
        Ok(())
    }

    /// Moment tensors under `m.` and `v.` prefixes, for checkpoints.
    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (name, t) in &self.m {
            out.push((format!("m.{name}"), t.clone()));
        }
        for (name, t) in &self.v {
            out.push((format!("v.{name}"), t.clone()));
        }
        out
    }

    /// Restores moments saved by `state_tensors` plus the step counter.
    pub fn restore(&mut self, t: usize, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        self.t = t;
        self.m.clear();
        self.v.clear();
        for (name, tensor) in tensors {
            if let Some(stripped) = name.strip_prefix("m.") {
                self.m.insert(stripped.to_string(), tensor.clone());
            } else if let Some(stripped) = name.strip_prefix("v.") {
                self.v.insert(stripped.to_string(), tensor.clone());
            } else {
                return Err(Error::data(format!(
                    "unexpected optimizer tensor name {name}"
                )));
            }
        }
        Ok(())
    }
}
