use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor_core::params::ParameterStore;
use crate::tensor_core::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Rescales all gradients together so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut BTreeMap<String, Tensor<T>>, max_norm: f64) -> f64 {
    let total: f64 = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|&x| {
            let v = x.to_f64_lossy();
            v * v
        })
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total > 0.0 {
        let k = T::of(max_norm / total);
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= k);
        }
    }
    total
}

#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, params: &mut ParameterStore<T>, grads: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            if p.shape() != g.shape() {
                return Err(Error::dim("optimizer", p.shape(), g.shape()));
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    let lr = T::of(self.lr);
                    for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * d;
                    }
                }
                OptimizerKind::Adam => {
                    let n = g.len();
                    let (m, v) = self
                        .moments
                        .entry(name.clone())
                        .or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
                    let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
                    let step = T::of(self.lr / bc1);
                    let c2 = T::of(bc2);
                    let eps = T::of(self.eps);
                    for (((w, &d), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = b1 * *mi + (T::one() - b1) * d;
                        *vi = b2 * *vi + (T::one() - b2) * d * d;
                        *w -= step * *mi / ((*vi / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_core::params::Init;

    #[test]
    fn clipping_bounds_the_joint_norm() {
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), Tensor::<f64>::vector(vec![3.0, 0.0]));
        grads.insert("b".to_string(), Tensor::<f64>::vector(vec![4.0]));
        let before = clip_global_norm(&mut grads, 1.0);
        assert!((before - 5.0).abs() < 1e-12);
        let after: f64 = grads.values().flat_map(|g| g.data().to_vec()).map(|x| x * x).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParameterStore::<f64>::new();
        store.insert("x", Tensor::vector(vec![2.0, -3.0]), Init::Zeros).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1);
        for _ in 0..500 {
            let x = store.get("x").unwrap().clone();
            let mut grads = BTreeMap::new();
            grads.insert("x".to_string(), x.scale(2.0));
            opt.apply(&mut store, &grads).unwrap();
        }
        assert!(store.get("x").unwrap().max_abs() < 1e-2);
    }
}
