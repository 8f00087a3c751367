//! Optimisers over a [`ParamStore`].

use crate::Real;
use serde::{Deserialize, Serialize};

use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| {
            let f = v.to_f64_lossy();
            f * f
        })
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::lit(max_norm / norm);
        for v in grads.iter_mut().flat_map(|g| g.iter_mut()) {
            *v *= s;
        }
    }
    norm
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        Self {
            config,
            m: store.zero_grads(),
            v: store.zero_grads(),
            t: 0,
        }
    }

    /// Applies one update and returns the gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &mut [Vec<T>]) -> f64 {
        let norm = clip_grad_norm(grads, self.config.clip_norm);
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps, wd) = (T::lit(c.lr), T::lit(c.eps), T::lit(c.weight_decay));
        let one = T::one();
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let w = store.get_mut(id).data_mut();
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for j in 0..w.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                w[j] -= lr * (mh / (vh.sqrt() + eps) + wd * w[j]);
            }
        }
        norm
    }
}

/// Plain SGD with heavy-ball momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    pub velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(store: &ParamStore<T>, lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: store.zero_grads(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Vec<T>]) {
        let (lr, mu) = (T::lit(self.lr), T::lit(self.momentum));
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let w = store.get_mut(id).data_mut();
            for ((wj, vj), gj) in w.iter_mut().zip(self.velocity[i].iter_mut()).zip(&grads[i]) {
                *vj = mu * *vj + *gj;
                *wj -= lr * *vj;
            }
        }
    }
}
