//! Optimizers. Update arithmetic runs in f64 regardless of the parameter
//! scalar so f32 and f64 instantiations walk the same trajectory up to one
//! rounding per write.

use crate::nn::{ParamId, ParamStore};
use crate::{scalar, Scalar};

/// Plain stochastic gradient descent.
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Sgd { lr }
    }

    pub fn step<S: Scalar>(&self, store: &mut ParamStore<S>, ids: &[ParamId]) {
        for &id in ids {
            let g: Vec<f64> = store.grad(id).data().iter().map(|v| v.to_f64().unwrap()).collect();
            let vals = store.value_mut(id).data_mut();
            for (v, gv) in vals.iter_mut().zip(g) {
                *v = scalar(v.to_f64().unwrap() - self.lr * gv);
            }
        }
    }
}

struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Adam with bias correction; keeps one moment slot per parameter, created
/// on first use.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    slots: Vec<Option<AdamSlot>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, slots: Vec::new() }
    }

    pub fn step<S: Scalar>(&mut self, store: &mut ParamStore<S>, ids: &[ParamId]) {
        if self.slots.len() < store.len() {
            self.slots.resize_with(store.len(), || None);
        }
        for &id in ids {
            let g: Vec<f64> = store.grad(id).data().iter().map(|v| v.to_f64().unwrap()).collect();
            let slot = self.slots[id.index()].get_or_insert_with(|| AdamSlot {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
                t: 0,
            });
            slot.t += 1;
            let bc1 = 1.0 - self.beta1.powi(slot.t as i32);
            let bc2 = 1.0 - self.beta2.powi(slot.t as i32);
            let vals = store.value_mut(id).data_mut();
            for i in 0..g.len() {
                slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g[i];
                slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = slot.m[i] / bc1;
                let vhat = slot.v[i] / bc2;
                let upd = self.lr * mhat / (vhat.sqrt() + self.eps);
                vals[i] = scalar(vals[i].to_f64().unwrap() - upd);
            }
        }
    }
}
