use super::tensor::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update using the gradients stored in `params`.
///
/// Parameters without a gradient slot are left alone. A NaN or infinite
/// gradient aborts the step before anything is modified.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "optimizer state tracks {} tensors, store has {}",
            state.m.len(),
            params.len()
        )));
    }
    for (id, name, t) in params.iter() {
        if let Some(g) = &t.grad {
            if g.len() != state.m[id.0].len() {
                return Err(Error::Shape(format!("gradient shape drift on `{name}`")));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient for parameter `{name}`")));
            }
        }
    }

    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    let precision = params.precision();
    for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
        let Some(g) = tensor.grad.take() else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, value) in tensor.values_mut().iter_mut().enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *value = precision.round(*value - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps));
        }
        tensor.grad = Some(g);
    }
    Ok(())
}
