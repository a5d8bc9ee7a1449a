use std::f64::consts::PI;

use super::params::ParamStore;
use crate::error::{Error, Result};

/// AdamW with decoupled weight decay and a cosine learning-rate schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Horizon of the cosine schedule.
    pub total_steps: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 5e-4,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            total_steps: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate in force at `step` (0-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        self.learning_rate * cosine_factor(step, self.total_steps)
    }
}

/// `0.5 * (1 + cos(pi * step / total))`, clamped to the schedule horizon.
pub fn cosine_factor(step: u64, total: u64) -> f64 {
    let t = (step.min(total) as f64) / (total.max(1) as f64);
    0.5 * (1.0 + (PI * t).cos())
}

/// Applies one AdamW update to every entry whose name passes `filter`, using the
/// gradients currently held in the store. Returns the learning rate used.
pub fn adamw_step(
    store: &mut ParamStore,
    config: &OptimizerConfig,
    step: u64,
    filter: impl Fn(&str) -> bool,
) -> f64 {
    let lr = config.lr_at(step);
    let (b1, b2) = (config.beta1, config.beta2);
    for p in store.iter_mut() {
        if !filter(&p.name) {
            continue;
        }
        p.step += 1;
        let t = p.step as i32;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let grad = p.grad.data().to_vec();
        let m = p.first_moment.data_mut();
        for (mi, gi) in m.iter_mut().zip(&grad) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
        }
        let v = p.second_moment.data_mut();
        for (vi, gi) in v.iter_mut().zip(&grad) {
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
        }
        let m = p.first_moment.data().to_vec();
        let v = p.second_moment.data().to_vec();
        let decay = lr * config.weight_decay;
        let values = p.value_mut().data_mut();
        for ((w, mi), vi) in values.iter_mut().zip(&m).zip(&v) {
            *w -= decay * *w;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    lr
}
