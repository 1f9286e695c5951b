use std::collections::BTreeMap;

use super::config::{DecayPolicy, TrainConfig};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::layers::ParamStore;

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam moments keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Adam {
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        self.step += 1;
        let (b1, b2) = ADAM_BETAS;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::InvalidConfig(format!("gradient for unknown parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::InvalidShape(format!(
                    "`{name}`: parameter {:?} but gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Multiplicative learning-rate decay driven by validation rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    lr: f64,
    decay: f64,
    floor: f64,
    policy: DecayPolicy,
    patience: usize,
    every: usize,
    best: f64,
    stale: usize,
    rounds: usize,
}

impl LrSchedule {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr0,
            decay: cfg.decay,
            floor: cfg.lr_floor,
            policy: cfg.decay_policy,
            patience: cfg.plateau_patience,
            every: cfg.decay_every,
            best: f64::INFINITY,
            stale: 0,
            rounds: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one validation loss and returns the learning rate to use next.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        self.rounds += 1;
        let decay = match self.policy {
            DecayPolicy::Plateau => {
                if val_loss < self.best {
                    self.best = val_loss;
                    self.stale = 0;
                    false
                } else {
                    self.stale += 1;
                    if self.stale >= self.patience {
                        self.stale = 0;
                        true
                    } else {
                        false
                    }
                }
            }
            DecayPolicy::EveryNEpochs => self.rounds % self.every == 0,
        };
        if decay {
            self.lr = (self.lr * self.decay).max(self.floor);
        }
        self.lr
    }
}
