use crate::error::{AutodiffError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        Self { m: Tensor::zeros(shape), v: Tensor::zeros(shape), t: 0 }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, cfg: &AdamConfig, params: &mut Tensor, grad: &Tensor) -> Result<()> {
        if params.shape() != grad.shape() || params.shape() != self.m.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                expected: params.shape().to_vec(),
                found: grad.shape().to_vec(),
            });
        }
        self.t += 1;
        let t = self.t.min(i32::MAX as u64) as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let m = self.m.data_mut();
        let v = self.v.data_mut();
        for (((p, &g), m), v) in params.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        Ok(())
    }
}

/// Adam over every trainable entry of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let states = store.ids().map(|id| AdamState::new(store.get(id).shape())).collect();
        Self { config, states }
    }

    /// Applies one update. `grads` is aligned with the store, as returned by
    /// [`ParamStore::grads`]; frozen entries are skipped.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.len() || self.states.len() != store.len() {
            return Err(AutodiffError::Invalid(format!(
                "optimizer tracks {} tensors, store has {}, got {} gradients",
                self.states.len(),
                store.len(),
                grads.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if !store.is_trainable(id) {
                continue;
            }
            let state = &mut self.states[id.index()];
            state.step(&self.config, store.get_mut(id), &grads[id.index()])?;
        }
        Ok(())
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }
}
