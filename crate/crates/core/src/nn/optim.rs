use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }

    /// Updates every entry; see [`AdamW::step_filtered`].
    pub fn step(&self, store: &mut ParamStore) -> Result<()> {
        self.step_filtered(store, |_| true)
    }

    /// Updates the entries selected by `trainable`. Gradients are left in
    /// place for the caller to clear.
    pub fn step_filtered(&self, store: &mut ParamStore, trainable: impl Fn(&str) -> bool) -> Result<()> {
        for (name, entry) in store.iter_mut() {
            if !trainable(name) {
                continue;
            }
            let Some(grad) = entry.grad.as_ref() else {
                return Err(Error::InconsistentState(format!("no gradient for {name}")));
            };
            entry.step += 1;
            let t = entry.step as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let decay = 1.0 - self.lr * self.weight_decay;
            let values = entry.value.values_mut();
            let m = entry.first_moment.values_mut();
            let v = entry.second_moment.values_mut();
            for (((p, &g), m), v) in values.iter_mut().zip(grad.values()).zip(m).zip(v) {
                *p *= decay;
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales the selected gradients so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64, selected: impl Fn(&str) -> bool) -> f64 {
    let norm = store
        .iter()
        .filter(|(name, _)| selected(name))
        .filter_map(|(_, e)| e.grad.as_ref())
        .flat_map(|g| g.values())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (name, entry) in store.iter_mut() {
            if !selected(name) {
                continue;
            }
            if let Some(g) = entry.grad.as_mut() {
                g.values_mut().iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    norm
}
