//! Named parameter storage shared between forward passes, the optimizer,
//! and the checkpoint container.

use crate::error::{Error, Result};
use crate::nn::tape::{Grads, Tape, Var};
use crate::rng::Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    /// Gradient accumulator, same length as `values`.
    pub grad: Vec<f64>,
}

/// A model's learnable parameters, keyed by unique name. Iteration order is
/// the name order (BTreeMap), which fixes the optimizer's update order and
/// the checkpoint layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

/// Tape leaves for one forward pass, one per parameter.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Panics if the name is unknown; parameter sets are fixed at model
    /// construction, so a miss is a bug, not an input error.
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter `{name}`"))
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "parameter `{name}` values do not match shape {shape:?}"
        );
        assert!(
            !self.entries.contains_key(&name),
            "duplicate parameter `{name}`"
        );
        let n = values.len();
        self.entries.insert(
            name,
            Param {
                shape: shape.to_vec(),
                values,
                grad: vec![0.0; n],
            },
        );
    }

    /// Insert a weight drawn uniformly from +-1/sqrt(fan_in), where fan_in
    /// is the trailing dimension.
    pub fn init_uniform(&mut self, name: impl Into<String>, shape: &[usize], rng: &mut Rng) {
        let fan_in = *shape.last().expect("weight shape must be non-empty") as f64;
        let bound = 1.0 / fan_in.sqrt();
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
        self.insert(name, shape, values);
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: &[usize]) {
        let n: usize = shape.iter().product();
        self.insert(name, shape, vec![0.0; n]);
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Usage(format!("unknown parameter `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value_count(&self) -> usize {
        self.entries.values().map(|p| p.values.len()).sum()
    }

    /// Plant every parameter on a tape as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(name, p)| (name.clone(), tape.leaf(&p.shape, p.values.clone())))
            .collect();
        Bound { vars }
    }

    /// Accumulate a tape's gradients into the stored accumulators.
    pub fn accumulate_grads(&mut self, grads: &Grads, bound: &Bound) {
        for (name, p) in self.entries.iter_mut() {
            let g = grads.of(bound.var(name));
            for (acc, gi) in p.grad.iter_mut().zip(g) {
                *acc += gi;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Round every value to its nearest f32, in place. Training keeps its
    /// state 32-bit representable so checkpoints round-trip bitwise.
    pub fn snap_to_f32(&mut self) {
        for p in self.entries.values_mut() {
            for v in p.values.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bind_and_accumulate() {
        let mut store = ParamStore::new();
        store.insert("w", &[2], vec![3.0, -1.0]);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let w = bound.var("w");
        let s = tape.sum(w);
        let grads = tape.backward(s).unwrap();
        store.accumulate_grads(&grads, &bound);
        assert_eq!(store.get("w").unwrap().grad, vec![1.0, 1.0]);
        store.accumulate_grads(&grads, &bound);
        assert_eq!(store.get("w").unwrap().grad, vec![2.0, 2.0]);
        store.zero_grads();
        assert_eq!(store.get("w").unwrap().grad, vec![0.0, 0.0]);
    }

    #[test]
    fn init_uniform_within_bound() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(0);
        store.init_uniform("w", &[8, 16], &mut rng);
        let bound = 1.0 / 4.0;
        for v in &store.get("w").unwrap().values {
            assert!(v.abs() <= bound);
        }
    }

    #[test]
    fn snap_to_f32_idempotent() {
        let mut store = ParamStore::new();
        store.insert("w", &[2], vec![0.1, std::f64::consts::PI]);
        store.snap_to_f32();
        let first = store.get("w").unwrap().values.clone();
        store.snap_to_f32();
        assert_eq!(first, store.get("w").unwrap().values);
        assert_eq!(first[0], 0.1f32 as f64);
    }
}
