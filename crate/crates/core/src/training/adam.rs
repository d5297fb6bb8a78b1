use serde::{Deserialize, Serialize};

use crate::autograd::Gradients;
use crate::nn::ParamStore;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments, one state slot per parameter entry.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Option<Vec<T>>>,
    v: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, params: usize) -> Self {
        Self {
            cfg,
            step: 0,
            m: vec![None; params],
            v: vec![None; params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every trainable entry that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = T::of(1.0 / (1.0 - b1.powi(t)));
        let c2 = T::of(1.0 / (1.0 - b2.powi(t)));
        let (b1, b2, lr, eps) = (T::of(b1), T::of(b2), T::of(self.cfg.learning_rate), T::of(self.cfg.epsilon));
        for (id, g) in grads.iter() {
            if !store.entry(id).trainable {
                continue;
            }
            let n = g.len();
            let m = self.m[id.0].get_or_insert_with(|| vec![T::zero(); n]);
            let v = self.v[id.0].get_or_insert_with(|| vec![T::zero(); n]);
            let w = store.value_mut(id).data_mut();
            for i in 0..n {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mh = m[i] * c1;
                let vh = v[i] * c2;
                w[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
