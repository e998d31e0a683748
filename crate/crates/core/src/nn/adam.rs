//! Bias-corrected Adam over [`NetworkParams`].

use super::{NetworkParams, NnError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 6e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(NnError::InvalidSpec(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: NetworkParams,
    pub v: NetworkParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &NetworkParams) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One Adam update. The bias corrections are folded into the step size,
/// `lr_t = lr * sqrt(1 - beta2^t) / (1 - beta1^t)`, and `epsilon` is added to
/// the uncorrected `sqrt(v)`.
///
/// Non-finite gradients are rejected before any state changes.
pub fn adam_step(params: &mut NetworkParams, grads: &NetworkParams, state: &mut AdamState) -> Result<(), NnError> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) || !params.same_shape(&state.v) {
        return Err(NnError::shape(
            "adam_step",
            "parameters, gradients and moments of equal shape".into(),
            "mismatched shapes".into(),
        ));
    }
    for (t, grad) in grads.tensors().enumerate() {
        if let Some(i) = grad.data().iter().position(|g| !g.is_finite()) {
            return Err(NnError::NonFinite {
                context: "gradient",
                tensor: t,
                index: i,
                value: grad.data()[i],
            });
        }
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.t += 1;
    let t = state.t as i32;
    let step = learning_rate * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t));
    let moments = state.m.tensors_mut().zip(state.v.tensors_mut());
    for ((p, g), (m, v)) in params.tensors_mut().zip(grads.tensors()).zip(moments) {
        let iter = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((p, &g), (m, v)) in iter {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= step * *m / (v.sqrt() + epsilon);
        }
    }
    Ok(())
}
