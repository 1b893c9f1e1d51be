//! Adam with bias correction and no weight decay.

use crate::error::{NnError, Result};
use crate::params::{Grads, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Grads,
    v: Grads,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Grads::zeros_like(store),
            v: Grads::zeros_like(store),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Non-finite gradients are rejected before anything changes.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> Result<()> {
        for id in store.ids() {
            if grads.get(id).iter().any(|g| !g.is_finite()) {
                return Err(NnError::NonFinite {
                    name: format!("{} (gradient)", store.name(id)),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.trainable_ids().collect();
        for id in ids {
            let g = grads.get(id);
            let m = self.m.get_mut(id);
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = self.v.get_mut(id);
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let (m, v) = (self.m.get(id), self.v.get(id));
            for ((p, mi), vi) in store.get_mut(id).iter_mut().zip(m).zip(v) {
                let mhat = mi / c1;
                let vhat = vi / c2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
