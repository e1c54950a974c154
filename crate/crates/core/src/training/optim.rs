//! Adam with bias correction and a one-cycle cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::model::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, lr: f64, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let grads = grads.tensors();
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(&grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for k in 0..p.len() {
            let gk = g.data[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Linear warmup from 0 to `base_lr` over the first
/// `floor(warmup_fraction * total_steps)` steps, then cosine decay towards 0.
pub fn one_cycle_lr(step: u64, total_steps: u64, base_lr: f64, warmup_fraction: f64) -> f64 {
    debug_assert!(step < total_steps);
    let warmup = (warmup_fraction * total_steps as f64).floor() as u64;
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    let t = (step - warmup) as f64 / (total_steps - warmup) as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}
