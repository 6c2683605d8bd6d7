use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::param::{ParamStore, Role};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.0002,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for every entry of one [`ParamStore`]; buffers of
/// non-trainable entries stay empty.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = |role: Role, len: usize| match role {
            Role::Trainable => vec![T::zero(); len],
            Role::Buffer => Vec::new(),
        };
        let m: Vec<Vec<T>> = params
            .iter()
            .map(|(_, p, r)| zeros(r, p.tensor.len()))
            .collect();
        AdamState {
            config,
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

/// One bias-corrected Adam update. Missing gradients count as zero.
/// Any non-finite gradient aborts before a single value is modified.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[Option<Vec<T>>],
    state: &mut AdamState<T>,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Optimizer(format!(
            "{} gradients and {} moment buffers for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for ((_, p, role), g) in params.iter().zip(grads) {
        let Some(g) = g else { continue };
        if role == Role::Buffer {
            continue;
        }
        if g.len() != p.tensor.len() {
            return Err(Error::Optimizer(format!(
                "gradient of `{}` has {} values, expected {}",
                p.name,
                g.len(),
                p.tensor.len()
            )));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Optimizer(format!(
                "non-finite gradient in `{}` at element {i}",
                p.name
            )));
        }
    }

    let cfg = state.config;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
    let bc1 = T::c(1.0 - cfg.beta1.powi(t));
    let bc2 = T::c(1.0 - cfg.beta2.powi(t));
    let (lr, eps) = (T::c(cfg.lr), T::c(cfg.eps));
    for (i, g) in grads.iter().enumerate() {
        let (tensor, role) = params.entry_mut(i);
        if role == Role::Buffer {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let g = g.as_deref();
        for (j, value) in tensor.data_mut().iter_mut().enumerate() {
            let gj = g.map_or(T::zero(), |g| g[j]);
            m[j] = b1 * m[j] + (T::one() - b1) * gj;
            v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *value = *value - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
