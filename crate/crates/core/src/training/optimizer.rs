//! AdamW with per-group learning rates, and global-norm clipping.

use crate::config::{GroupValues, TrainConfig};
use crate::substrate::{ParamStore, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

impl From<&TrainConfig> for AdamWConfig {
    fn from(c: &TrainConfig) -> Self {
        AdamWConfig { beta1: c.beta1, beta2: c.beta2, eps: c.adam_eps, weight_decay: c.weight_decay }
    }
}

/// Adaptive moments with weight decay applied directly to the parameters,
/// not folded into the gradient.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, config: AdamWConfig) -> Self {
        let zeros = || store.slots().iter().map(|s| Tensor::zeros(s.value.shape())).collect();
        AdamW { config, step: 0, first: zeros(), second: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every trainable parameter using its group's rate.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: &GroupValues) {
        self.step += 1;
        let AdamWConfig { beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, slot) in store.slots_mut().iter_mut().enumerate() {
            if !slot.trainable {
                continue;
            }
            let rate = lr.get(slot.group);
            if rate == 0.0 {
                continue;
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let grad = slot.grad.data();
            let decay = 1.0 - rate * weight_decay;
            for (j, w) in slot.value.data_mut().iter_mut().enumerate() {
                let gj = grad[j].as_f64();
                let mj = beta1 * m[j].as_f64() + (1.0 - beta1) * gj;
                let vj = beta2 * v[j].as_f64() + (1.0 - beta2) * gj * gj;
                m[j] = T::of(mj);
                v[j] = T::of(vj);
                let update = rate * (mj / bc1) / ((vj / bc2).sqrt() + eps);
                *w = T::of(w.as_f64() * decay - update);
            }
        }
    }
}

/// Rescales all trainable gradients so their joint norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = trainable_grad_norm(store);
    if norm > max_norm {
        let scale = T::of(max_norm / norm);
        for slot in store.slots_mut().iter_mut().filter(|s| s.trainable) {
            slot.grad.data_mut().iter_mut().for_each(|g| *g = *g * scale);
        }
    }
    norm
}

pub fn trainable_grad_norm<T: Scalar>(store: &ParamStore<T>) -> f64 {
    store
        .slots()
        .iter()
        .filter(|s| s.trainable)
        .map(|s| s.grad.sum_sq())
        .sum::<f64>()
        .sqrt()
}
