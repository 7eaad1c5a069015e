//! Named parameter storage and seeded initialization.

use std::collections::BTreeMap;

use crate::error::{AcitError, Result};
use crate::rng::Rng;
use crate::tape::{Grads, Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Glorot uniform over the first two extents (fan_in, fan_out).
    Xavier,
    Zeros,
    Ones,
    Normal(f64),
}

/// Parameters keyed by dotted name. Iteration order is lexicographic, which
/// fixes the order of every reduction over parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T: Scalar> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet {
            tensors: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Create `name` with a stream seeded from `(seed, name)` only, so a
    /// parameter's initial value does not depend on what else is declared.
    pub fn declare(&mut self, seed: u64, name: &str, shape: &[usize], init: Init) {
        let mut rng = Rng::named(seed, name);
        let t = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, T::one()),
            Init::Normal(std) => Tensor::from_fn(shape, |_| T::of(std * rng.normal())),
            Init::Xavier => {
                let fan_in = shape[0];
                let fan_out = if shape.len() > 1 { shape[1] } else { 1 };
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::from_fn(shape, |_| T::of(rng.range(-a, a)))
            }
        };
        self.tensors.insert(name.to_string(), t);
    }

    pub fn insert(&mut self, name: &str, t: Tensor<T>) {
        self.tensors.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> ParamSet<T> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Register every parameter as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }

    /// `self += scale * grads` for every parameter in `bound`.
    pub fn accumulate(&mut self, bound: &Bound, grads: &Grads<T>, scale: T) {
        for (name, t) in self.tensors.iter_mut() {
            let Some(&v) = bound.vars.get(name) else { continue };
            if let Some(g) = grads.get(v) {
                for (d, &s) in t.data_mut().iter_mut().zip(g.data()) {
                    *d = *d + scale * s;
                }
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.is_finite())
    }
}

/// Parameter names mapped to their leaves on one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Build from explicit name/leaf pairs, e.g. leaves created by a
    /// gradient checker.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Bound {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| AcitError::config(format!("missing parameter '{name}'")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_depends_only_on_seed_and_name() {
        let mut a = ParamSet::<f32>::new();
        a.declare(5, "x.w", &[3, 4], Init::Xavier);
        let mut b = ParamSet::<f32>::new();
        b.declare(5, "other", &[2], Init::Normal(1.0));
        b.declare(5, "x.w", &[3, 4], Init::Xavier);
        assert_eq!(a.get("x.w"), b.get("x.w"));
        let bound = (6.0f64 / 7.0).sqrt() as f32;
        assert!(a.get("x.w").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert_eq!(b.count(), 14);
    }

    #[test]
    fn accumulate_scales_gradients() {
        let mut p = ParamSet::<f64>::new();
        p.insert("w", Tensor::from_f64(vec![2], &[1.0, 2.0]).unwrap());
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let w = bound.get("w").unwrap();
        let s = tape.sum(w).unwrap();
        let g = tape.backward(s).unwrap();
        let mut acc = p.zeros_like();
        acc.accumulate(&bound, &g, 0.5);
        assert_eq!(acc.get("w").unwrap().data(), &[0.5, 0.5]);
        assert!(bound.get("nope").is_err());
    }
}
