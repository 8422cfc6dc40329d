//! Temporal convolution stack followed by the recurrent descriptor
//! summarizer.
//!
//! Each conv layer applies `conv1d → Φ → maxpool(2)`, halving the number of
//! time steps. The summarizer then walks the pooled steps `h_t` with
//! `r_t = softmax(W_D [h_t; r_{t-1}])`, `r_0 = 0`, and reports the semantic
//! summary `s_T = Dᵀ r_T` of the final step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor_core::{ops, ActivationKind, Bindings, Graph, Init, ParameterStore, Tensor, Var};

pub const DESCRIPTORS: &str = "learner.descriptors";
pub const DESCRIPTOR_WEIGHTS: &str = "learner.w_d";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    pub filters: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStackConfig {
    pub layers: Vec<ConvLayer>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: ActivationKind,
}

impl ConvStackConfig {
    /// Two kernel-3 layers with `hidden` then `output_dim` filters.
    pub fn standard(input_dim: usize, hidden: usize, output_dim: usize) -> Self {
        ConvStackConfig {
            layers: vec![
                ConvLayer {
                    filters: hidden,
                    kernel: 3,
                },
                ConvLayer {
                    filters: output_dim,
                    kernel: 3,
                },
            ],
            input_dim,
            output_dim,
            activation: ActivationKind::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let last = self
            .layers
            .last()
            .ok_or_else(|| Error::Config("conv stack needs at least one layer".into()))?;
        if last.filters != self.output_dim {
            return Err(Error::Config(format!(
                "last conv layer has {} filters but the model dimension is {}",
                last.filters, self.output_dim
            )));
        }
        if let Some(l) = self.layers.iter().find(|l| l.kernel % 2 == 0 || l.filters == 0) {
            return Err(Error::Config(format!(
                "conv layers need odd kernels and at least one filter, got {l:?}"
            )));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("conv stack input dimension must be positive".into()));
        }
        Ok(())
    }

    /// Shortest input sequence the stack accepts.
    pub fn min_len(&self) -> usize {
        1 << self.layers.len()
    }

    /// Time steps left after the stack for an input of `len` steps.
    pub fn output_len(&self, len: usize) -> usize {
        len >> self.layers.len()
    }

    pub fn register<T: Scalar>(&self, store: &mut ParameterStore<T>, seed: u64) -> Result<()> {
        self.validate()?;
        let mut c_in = self.input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            let std = (2.0 / (l.kernel * c_in) as f64).sqrt();
            store.register(
                &weight_name(i),
                &[l.kernel, c_in, l.filters],
                Init::Normal {
                    std,
                    seed: seed.wrapping_add(i as u64),
                },
            )?;
            store.register(&bias_name(i), &[l.filters], Init::Zeros)?;
            c_in = l.filters;
        }
        Ok(())
    }
}

pub fn weight_name(layer: usize) -> String {
    format!("learner.conv{layer}.weight")
}

pub fn bias_name(layer: usize) -> String {
    format!("learner.conv{layer}.bias")
}

pub fn conv_stack_graph<T: Scalar>(
    graph: &mut Graph<T>,
    x: Var,
    cfg: &ConvStackConfig,
    params: &Bindings,
) -> Result<Var> {
    let (len, f) = graph.value(x).dims2()?;
    if f != cfg.input_dim {
        return Err(Error::dim("conv stack input", &[len, cfg.input_dim], &[len, f]));
    }
    if len < cfg.min_len() {
        return Err(Error::Config(format!(
            "sequence of {len} steps is too short for {} conv layers; need at least {}",
            cfg.layers.len(),
            cfg.min_len()
        )));
    }
    let mut h = x;
    for i in 0..cfg.layers.len() {
        let conv = graph.conv1d(h, params.var(&weight_name(i))?, params.var(&bias_name(i))?)?;
        let act = graph.activation(conv, cfg.activation)?;
        h = graph.maxpool1d(act)?;
    }
    Ok(h)
}

/// Runs the conv stack on an `L×F` input, giving `⌊L/2^layers⌋×d`.
pub fn conv_stack_forward<T: Scalar>(x: &Tensor<T>, cfg: &ConvStackConfig, params: &ParameterStore<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let b = params.bind_frozen(&mut g);
    let xv = g.constant(x.clone());
    let out = conv_stack_graph(&mut g, xv, cfg, &b)?;
    Ok(g.value(out).clone())
}

/// The `N_D×d` matrix of latent descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorBank<T> {
    pub matrix: Tensor<T>,
}

impl<T: Scalar> DescriptorBank<T> {
    pub fn new(matrix: Tensor<T>) -> Result<Self> {
        matrix.dims2()?;
        if !matrix.all_finite() {
            return Err(Error::NumericDomain { op: "descriptor bank" });
        }
        Ok(DescriptorBank { matrix })
    }

    pub fn count(&self) -> usize {
        self.matrix.shape()[0]
    }
}

/// Registers `D` (`N_D×d`) and `W_D` (`N_D×(d+N_D)`).
pub fn register_summarizer<T: Scalar>(store: &mut ParameterStore<T>, dim: usize, descriptors: usize, seed: u64) -> Result<()> {
    if descriptors == 0 || dim == 0 {
        return Err(Error::Config("descriptor count and model dimension must be positive".into()));
    }
    store.register(DESCRIPTORS, &[descriptors, dim], Init::Normal { std: 1.0, seed })?;
    store.register(
        DESCRIPTOR_WEIGHTS,
        &[descriptors, dim + descriptors],
        Init::Normal {
            std: 1.0 / ((dim + descriptors) as f64).sqrt(),
            seed: seed.wrapping_add(1),
        },
    )
}

/// One recurrence step: `softmax(W_D [h; r_prev])`.
pub fn descriptor_step<T: Scalar>(h: &Tensor<T>, r_prev: &Tensor<T>, w_d: &Tensor<T>) -> Result<Tensor<T>> {
    let (n_d, width) = w_d.dims2()?;
    if r_prev.shape() != [n_d] || h.rank() != 1 || h.len() + n_d != width {
        return Err(Error::dim("descriptor_step", w_d.shape(), &[h.len() + r_prev.len()]));
    }
    let mut joined = h.data().to_vec();
    joined.extend_from_slice(r_prev.data());
    ops::softmax(&ops::matmul(w_d, &Tensor::vector(joined))?)
}

pub fn descriptor_step_graph<T: Scalar>(graph: &mut Graph<T>, h: Var, r_prev: Var, w_d: Var) -> Result<Var> {
    let joined = graph.concat(&[h, r_prev])?;
    let logits = graph.matmul(w_d, joined)?;
    graph.softmax(logits)
}

/// Semantic summary `s_T` and the descriptor-weight trajectory (`T_r×N_D`).
pub fn summarize_graph<T: Scalar>(graph: &mut Graph<T>, h: Var, descriptors: Var, w_d: Var) -> Result<(Var, Var)> {
    let (steps, dim) = graph.value(h).dims2()?;
    let (n_d, d2) = graph.value(descriptors).dims2()?;
    if d2 != dim {
        return Err(Error::dim("summarize", graph.shape(h), graph.shape(descriptors)));
    }
    let mut r = graph.constant(Tensor::zeros(&[n_d]));
    let mut trajectory = Vec::with_capacity(steps);
    for t in 0..steps {
        let ht = graph.row(h, t)?;
        r = descriptor_step_graph(graph, ht, r, w_d)?;
        trajectory.push(r);
    }
    let summary = graph.matmul(r, descriptors)?;
    let traj = graph.stack_rows(&trajectory)?;
    Ok((summary, traj))
}

pub fn summarize<T: Scalar>(h: &Tensor<T>, bank: &DescriptorBank<T>, w_d: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (steps, _) = h.dims2()?;
    let mut r = Tensor::zeros(&[bank.count()]);
    let mut rows = Vec::with_capacity(steps);
    for t in 0..steps {
        r = descriptor_step(&Tensor::vector(h.row(t).to_vec()), &r, w_d)?;
        rows.push(r.data().to_vec());
    }
    let s = ops::matmul(&r, &bank.matrix)?;
    Ok((s, Tensor::from_rows(&rows)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_uniform_descriptor_weights() {
        let r = descriptor_step(
            &Tensor::<f64>::vector(vec![1.0, -2.0, 3.0]),
            &Tensor::zeros(&[4]),
            &Tensor::zeros(&[4, 7]),
        )
        .unwrap();
        assert!(r.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn hand_softmax_step() {
        // W_D picks h[0] into logit 0; h[0] = ln 3
        let w_d = Tensor::<f64>::matrix(2, 3, vec![1., 0., 0., 0., 0., 0.]).unwrap();
        let r = descriptor_step(&Tensor::vector(vec![3f64.ln()]), &Tensor::zeros(&[2]), &w_d).unwrap();
        assert!((r.data()[0] - 0.75).abs() < 1e-12);
        assert!((r.data()[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn summary_is_descriptor_mixture() {
        let bank = DescriptorBank::new(Tensor::<f64>::identity(2)).unwrap();
        let w_d = Tensor::<f64>::matrix(2, 4, vec![1., 0., 0., 0., 0., 0., 0., 0.]).unwrap();
        let h = Tensor::<f64>::matrix(1, 2, vec![-(3f64.ln()), 0.0]).unwrap();
        let (s, traj) = summarize(&h, &bank, &w_d).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-12);
        assert!((s.data()[1] - 0.75).abs() < 1e-12);
        assert_eq!(traj.shape(), &[1, 2]);
    }

    #[test]
    fn conv_stack_length_checks() {
        let cfg = ConvStackConfig::standard(3, 4, 5);
        let mut store = ParameterStore::<f64>::new();
        cfg.register(&mut store, 1).unwrap();
        let out = conv_stack_forward(&Tensor::full(&[16, 3], 0.5), &cfg, &store).unwrap();
        assert_eq!(out.shape(), &[4, 5]);
        let err = conv_stack_forward(&Tensor::full(&[3, 3], 0.5), &cfg, &store).unwrap_err();
        assert!(err.to_string().contains("at least 4"), "{err}");
        let bad = ConvStackConfig::standard(3, 4, 6);
        let mut cfg_bad = bad.clone();
        cfg_bad.output_dim = 5;
        assert!(cfg_bad.validate().is_err());
    }
}
