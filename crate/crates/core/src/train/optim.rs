use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Module;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, weight_decay: 0.01, eps: 1e-8 }
    }
}

/// Moment buffers keyed by parameter name, and the step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

/// Bias-corrected Adam with decoupled decay:
/// `theta <- theta (1 - lr wd) - lr m^ / (sqrt(v^) + eps)`.
///
/// Gradients are read from each parameter's grad slot (absent means zero).
/// All gradients are checked before anything changes, so a rejected step
/// leaves parameters and state untouched.
pub fn adamw_step<M: Module + ?Sized>(model: &mut M, state: &mut OptimState, cfg: &AdamWConfig, lr: f64) -> Result<()> {
    let mut bad = None;
    model.visit(&mut |p| {
        if bad.is_none() && p.learnable() && p.tensor().grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
            bad = Some(p.name().to_string());
        }
    });
    if let Some(name) = bad {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
    let decay = 1.0 - lr * cfg.weight_decay;
    let OptimState { m, v, .. } = state;
    model.visit_mut(&mut |p| {
        if !p.learnable() {
            return;
        }
        let n = p.numel();
        let m = m.entry(p.name().to_string()).or_insert_with(|| vec![0.0; n]);
        let v = v.entry(p.name().to_string()).or_insert_with(|| vec![0.0; n]);
        let tensor = p.tensor_mut();
        let grad = tensor.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for (j, theta) in tensor.data_mut().iter_mut().enumerate() {
            let g = grad[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let update = (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.eps);
            *theta = *theta * decay - lr * update;
        }
    });
    Ok(())
}

/// `eta_min + (eta_max - eta_min) (1 + cos(pi t / T)) / 2` for `0 <= t <= T`.
pub fn cosine_lr(t: usize, t_max: usize, eta_max: f64, eta_min: f64) -> Result<f64> {
    if t > t_max {
        return Err(Error::OutOfRange { step: "cosine_lr", detail: format!("t = {t} beyond T_max = {t_max}") });
    }
    if t == 0 {
        return Ok(eta_max);
    }
    let phase = std::f64::consts::PI * t as f64 / t_max as f64;
    Ok(eta_min + (eta_max - eta_min) * (1.0 + phase.cos()) / 2.0)
}
