use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Learning-rate multiplier at `epoch`: the product of every factor whose
/// milestone is ≤ `epoch`.
pub fn lr_factor(schedule: &[(usize, f64)], epoch: usize) -> f64 {
    schedule
        .iter()
        .filter(|(e, _)| *e <= epoch)
        .map(|(_, f)| f)
        .product()
}

/// First and second moment state.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, len: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        })
    }

    /// One bias-corrected update with learning rate `config.lr * lr_scale`.
    pub fn step<T: Real>(&mut self, params: &mut [T], grads: &[T], lr_scale: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(
                "parameter and gradient lengths differ from the optimizer state",
            ));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let step = lr * lr_scale;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let g = g.as_f64() + weight_decay * p.as_f64();
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let update = step * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            *p -= T::of(update);
        }
        Ok(())
    }
}
