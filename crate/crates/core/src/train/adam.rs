//! Adaptive-moment gradient descent with bias correction, plus global-norm
//! gradient clipping. Updates iterate parameters in name order, so the
//! arithmetic sequence is fixed and runs reproduce bitwise.

use crate::nn::params::ParamStore;
use std::collections::BTreeMap;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
        }
    }

    /// Apply one update from the gradients accumulated in `params`.
    pub fn step(&mut self, params: &mut ParamStore) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; p.values.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; p.values.len()]);
            for i in 0..p.values.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Scale every gradient by `factor` (e.g. 1/batch for mean reduction).
pub fn scale_grads(params: &mut ParamStore, factor: f64) {
    for (_, p) in params.iter_mut() {
        for g in p.grad.iter_mut() {
            *g *= factor;
        }
    }
}

/// Clip gradients to a maximum global L2 norm; returns the pre-clip norm.
pub fn clip_global_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, p) in params.iter() {
        for g in &p.grad {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        scale_grads(params, factor);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", &[1], vec![x]);
        s
    }

    #[test]
    fn adam_minimizes_quadratic() {
        // d/dx (x - 3)^2 = 2(x - 3)
        let mut store = quadratic_store(10.0);
        let mut adam = Adam::new(0.1);
        for _ in 0..500 {
            let x = store.get("x").unwrap().values[0];
            store.get_mut("x").unwrap().grad[0] = 2.0 * (x - 3.0);
            adam.step(&mut store);
        }
        let x = store.get("x").unwrap().values[0];
        assert!((x - 3.0).abs() < 1e-3, "{x}");
    }

    #[test]
    fn clip_reduces_norm() {
        let mut store = ParamStore::new();
        store.insert("a", &[2], vec![0.0, 0.0]);
        store.get_mut("a").unwrap().grad = vec![3.0, 4.0];
        let norm = clip_global_norm(&mut store, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let g = &store.get("a").unwrap().grad;
        let clipped = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((clipped - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clip_noop_below_threshold() {
        let mut store = ParamStore::new();
        store.insert("a", &[2], vec![0.0, 0.0]);
        store.get_mut("a").unwrap().grad = vec![0.3, 0.4];
        clip_global_norm(&mut store, 10.0);
        assert_eq!(store.get("a").unwrap().grad, vec![0.3, 0.4]);
    }

    #[test]
    fn steps_are_deterministic() {
        let run = || {
            let mut store = quadratic_store(5.0);
            let mut adam = Adam::new(0.01);
            for _ in 0..50 {
                let x = store.get("x").unwrap().values[0];
                store.get_mut("x").unwrap().grad[0] = 2.0 * (x - 3.0);
                adam.step(&mut store);
            }
            store.get("x").unwrap().values[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
