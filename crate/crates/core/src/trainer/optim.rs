//! AdamW with decoupled weight decay, and the warm-up + cosine learning
//! rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One parameter tensor with its gradient.
pub struct ParamSlot<'a> {
    pub values: &'a mut [f64],
    pub grads: &'a [f64],
    pub decay: bool,
}

/// First/second moment estimates per slot, plus the step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

/// One AdamW update. Slots must be passed in the same order and with the
/// same sizes on every call.
pub fn adamw_step(slots: &mut [ParamSlot<'_>], state: &mut AdamWState, lr: f64, cfg: &AdamWConfig) -> Result<()> {
    for s in slots.iter() {
        if s.values.len() != s.grads.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters with {} gradients",
                s.values.len(),
                s.grads.len()
            )));
        }
        if s.grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
    }
    if state.first.is_empty() {
        state.first = slots.iter().map(|s| vec![0.0; s.values.len()]).collect();
        state.second = state.first.clone();
    }
    if state.first.len() != slots.len()
        || state.first.iter().zip(slots.iter()).any(|(m, s)| m.len() != s.values.len())
    {
        return Err(Error::ShapeMismatch("optimizer state does not match parameters".into()));
    }

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for ((slot, m), v) in slots.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        let decay = if slot.decay { lr * cfg.weight_decay } else { 0.0 };
        for i in 0..slot.values.len() {
            let g = slot.grads[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            let theta = slot.values[i];
            slot.values[i] = theta - lr * m_hat / (v_hat.sqrt() + cfg.eps) - decay * theta;
        }
    }
    Ok(())
}

/// Linear warm-up from 0 to `lr_max` over `warmup_epochs`, then half-cosine
/// decay to 0 at the end of the last epoch.
pub fn lr_schedule(step: usize, steps_per_epoch: usize, epochs: usize, warmup_epochs: usize, lr_max: f64) -> f64 {
    let warm = warmup_epochs * steps_per_epoch;
    let total = epochs * steps_per_epoch;
    if step < warm {
        return lr_max * step as f64 / warm as f64;
    }
    let span = total.saturating_sub(warm);
    if span == 0 {
        return lr_max;
    }
    let progress = ((step - warm) as f64 / span as f64).min(1.0);
    0.5 * lr_max * (1.0 + (std::f64::consts::PI * progress).cos())
}
