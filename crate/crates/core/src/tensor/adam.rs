use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

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
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `param` from its accumulated grad.
pub fn adam_step(param: &mut Tensor, state: &mut AdamState) -> Result<()> {
    if state.m.len() != param.len() {
        return Err(Error::dim("adam_step", param.shape(), &[state.m.len()]));
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let grad = param
        .grad()
        .ok_or_else(|| Error::Usage("adam_step on a tensor without grad".into()))?
        .to_vec();
    for (i, (w, g)) in param.data_mut().iter_mut().zip(&grad).enumerate() {
        let m = beta1 * state.m[i] + (1.0 - beta1) * g;
        let v = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over every parameter of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub states: Vec<AdamState>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        Adam {
            states: store
                .iter()
                .map(|(_, _, t)| AdamState::new(t.len(), config))
                .collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.states.len() != store.len() {
            return Err(Error::Usage("optimizer built for a different store".into()));
        }
        for (id, state) in store.ids().collect::<Vec<_>>().into_iter().zip(&mut self.states) {
            adam_step(store.get_mut(id), state)?;
        }
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        self.states.first().map_or(0, |s| s.t)
    }
}
