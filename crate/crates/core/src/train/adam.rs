use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// First and second moment estimates per parameter, plus the step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = |store: &ParamStore| store.iter().map(|(n, p)| (n.to_string(), vec![0.0; p.value.numel()])).collect();
        Self {
            t: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }
}

/// One bias-corrected Adam update using the gradients held in `store`.
/// Nothing is modified if any gradient is non-finite.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64, hp: AdamConfig) -> Result<()> {
    if let Some((name, _)) = store.iter().find(|(_, p)| p.grad.iter().any(|g| !g.is_finite())) {
        return Err(Error::NonFiniteGradient(name.to_string()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (name, p) in store.iter_mut() {
        let m = state.m.get_mut(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let v = state.v.get_mut(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
            *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
    }
    Ok(())
}
