use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamGrads};

/// Adam in descent form: `θ ← θ − lr · m̂ / (sqrt(v̂) + eps)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: ParamGrads,
    v: ParamGrads,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            step: 0,
            m: ModelParams::zeros(params.topology()),
            v: ModelParams::zeros(params.topology()),
        }
    }
}

impl Adam {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid Adam hyperparameters {self:?}")))
        }
    }

    /// One update step; advances the moment state.
    pub fn step(&self, params: &mut ModelParams, grads: &ParamGrads, state: &mut AdamState) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&state.m) {
            return Err(Error::Shape("Adam: parameter, gradient and state shapes differ".into()));
        }
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let AdamState { m, v, .. } = state;
        for (((p, g), m), v) in params
            .scalars_mut()
            .zip(grads.scalars())
            .zip(m.scalars_mut())
            .zip(v.scalars_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}
