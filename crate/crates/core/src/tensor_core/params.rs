use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor_core::graph::{Gradients, Graph, Var};
use crate::tensor_core::Tensor;

/// How a parameter was (or will be) initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    Zeros,
    Ones,
    Normal { std: f64, seed: u64 },
}

impl Init {
    pub fn materialize<T: Scalar>(&self, shape: &[usize]) -> Tensor<T> {
        match *self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, T::one()),
            Init::Normal { std, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let normal = Normal::new(0.0, std).expect("finite std");
                let n = shape.iter().product();
                let data = (0..n).map(|_| T::of(normal.sample(&mut rng))).collect();
                Tensor::new(shape.to_vec(), data).expect("consistent shape")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    pub init: Init,
}

/// Named trainable tensors. Iteration order is the lexicographic name order,
/// which keeps checkpoints and optimizer updates deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore<T> {
    entries: BTreeMap<String, Parameter<T>>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            entries: BTreeMap::new(),
        }
    }

    /// Registers a freshly initialized parameter. Names must be unique.
    pub fn register(&mut self, name: &str, shape: &[usize], init: Init) -> Result<()> {
        self.insert(name, init.materialize(shape), init)
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, init: Init) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("parameter {name:?} registered twice")));
        }
        self.entries.insert(name.to_string(), Parameter { value, init });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    /// Records every parameter on `graph` as a trainable leaf.
    pub fn bind(&self, graph: &mut Graph<T>) -> Bindings {
        let vars = self
            .entries
            .iter()
            .map(|(name, p)| (name.clone(), graph.param(p.value.clone())))
            .collect();
        Bindings { vars }
    }

    /// Records every parameter as a constant (inference without gradients).
    pub fn bind_frozen(&self, graph: &mut Graph<T>) -> Bindings {
        let vars = self
            .entries
            .iter()
            .map(|(name, p)| (name.clone(), graph.constant(p.value.clone())))
            .collect();
        Bindings { vars }
    }

    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Parameter {
                            value: p.value.cast(),
                            init: p.init,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Parameter name → graph variable for one forward pass.
#[derive(Debug, Clone)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter {name:?} not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Gradient of every bound parameter; parameters the loss does not touch
    /// get zeros.
    pub fn collect_grads<T: Scalar>(
        &self,
        graph: &Graph<T>,
        grads: &mut Gradients<T>,
    ) -> BTreeMap<String, Tensor<T>> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = grads.take(v).unwrap_or_else(|| Tensor::zeros(graph.shape(v)));
                (name.clone(), g)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut store = ParameterStore::<f64>::new();
        store.register("w", &[2, 2], Init::Zeros).unwrap();
        assert!(store.register("w", &[3], Init::Ones).is_err());
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a: Tensor<f64> = Init::Normal { std: 0.1, seed: 9 }.materialize(&[4, 3]);
        let b: Tensor<f64> = Init::Normal { std: 0.1, seed: 9 }.materialize(&[4, 3]);
        let c: Tensor<f64> = Init::Normal { std: 0.1, seed: 10 }.materialize(&[4, 3]);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
