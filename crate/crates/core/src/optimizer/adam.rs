use serde::{Deserialize, Serialize};

use crate::circuit::Angles;
use crate::error::{AqcError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    mut state: AdamState,
    gradient: &[f64],
    angles: &Angles,
) -> Result<(AdamState, Angles)> {
    if gradient.len() != state.m.len() || angles.len() != state.m.len() {
        return Err(AqcError::Shape(format!(
            "Adam state has {} entries, gradient {}, angles {}",
            state.m.len(),
            gradient.len(),
            angles.len()
        )));
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(AqcError::Divergence(format!("gradient entry {i} is not finite")));
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    let mut next = angles.0.clone();
    for (((x, g), m), v) in next
        .iter_mut()
        .zip(gradient)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *x -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok((state, Angles(next)))
}
