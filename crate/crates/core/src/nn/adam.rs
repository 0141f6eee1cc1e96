use std::collections::BTreeMap;

use super::params::ParamSet;
use super::tensor::Tensor2D;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a named subset of a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    m: BTreeMap<String, Tensor2D>,
    v: BTreeMap<String, Tensor2D>,
}

impl AdamState {
    /// Tracks every parameter in `names`.
    pub fn new<'a, I>(params: &ParamSet, names: I, config: AdamConfig) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for name in names {
            let (r, c) = params.value(name)?.shape();
            m.insert(name.to_string(), Tensor2D::zeros(r, c));
            v.insert(name.to_string(), Tensor2D::zeros(r, c));
        }
        Ok(AdamState {
            config,
            step_count: 0,
            m,
            v,
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.m.keys().map(String::as_str)
    }

    /// Errors if any tracked gradient is non-finite, without touching state.
    pub fn check_grads(&self, params: &ParamSet) -> Result<()> {
        for name in self.m.keys() {
            if !params.grad(name)?.is_finite() {
                return Err(Error::NonFiniteGradient {
                    name: name.clone(),
                    step: self.step_count + 1,
                });
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update of the parameters tracked by `state`,
/// followed by zeroing their gradients.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, lr: f64) -> Result<()> {
    state.check_grads(params)?;
    state.step_count += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step_count as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (name, m) in state.m.iter_mut() {
        let v = state.v.get_mut(name).expect("moment maps share keys");
        let p = params.get_mut(name)?;
        let (value, grad) = (p.value.data_mut(), p.grad.data_mut());
        for (((x, g), mi), vi) in value
            .iter_mut()
            .zip(grad.iter_mut())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * *g;
            *vi = beta2 * *vi + (1.0 - beta2) * *g * *g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
            *g = 0.0;
        }
    }
    Ok(())
}
