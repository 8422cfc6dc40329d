//! Finite-difference audit of the full SemNet forward pass and ranking loss
//! in 64-bit arithmetic.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::train::batch_loss;
use super::{Model, ModelVariant, TrainConfig};
use crate::encoders::{PlotDocument, TokenIndex};
use crate::error::Result;
use crate::memory::{GraphMemory, ReadMode, ResetPolicy};
use crate::rng::{derive_seed, Rng};
use crate::tensor_core::{grad_check, gradcheck::DEFAULT_STEP, ActivationKind, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub variant: ModelVariant,
    pub read_mode: ReadMode,
    pub segments: usize,
    pub model_dim: usize,
    pub descriptors: usize,
    pub memory_slots: usize,
    pub feature_dim: usize,
    pub conv_hidden: usize,
    pub word_dim: usize,
    pub vocab_size: usize,
    pub batch: usize,
    pub margin: f64,
    pub activation: ActivationKind,
    /// Standard deviation of the starting memory rows, standing in for rows
    /// left by earlier writes.
    pub memory_scale: f64,
    pub step: f64,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            variant: ModelVariant::SemNet,
            read_mode: ReadMode::Soft,
            segments: 16,
            model_dim: 32,
            descriptors: 8,
            memory_slots: 16,
            feature_dim: 16,
            conv_hidden: 16,
            word_dim: 24,
            vocab_size: 12,
            batch: 3,
            margin: 0.2,
            activation: ActivationKind::Tanh,
            memory_scale: 1.0,
            step: DEFAULT_STEP,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AuditReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub per_param: BTreeMap<String, f64>,
    pub coordinates: usize,
    pub parameters: usize,
    pub loss: f64,
    pub elapsed: Duration,
    /// Largest absolute analytic gradient per parameter.
    pub grad_magnitude: BTreeMap<String, f64>,
}

fn gaussian(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("non-empty shape")
}

/// Builds a model and a random batch at the given dims and compares every
/// parameter gradient of the batch ranking loss with central differences.
pub fn gradient_audit(cfg: &AuditConfig) -> Result<AuditReport> {
    let start = Instant::now();
    let train = TrainConfig {
        margin: cfg.margin,
        seed: cfg.seed,
        segments: cfg.segments,
        model_dim: cfg.model_dim,
        word_dim: cfg.word_dim,
        descriptors: cfg.descriptors,
        memory_slots: cfg.memory_slots,
        read_mode: cfg.read_mode,
        conv_filters: vec![cfg.conv_hidden],
        activation: cfg.activation,
        batch_size: cfg.batch,
        memory_reset: ResetPolicy::SeededRandom,
        ..TrainConfig::default()
    };
    let tokens = TokenIndex::from_tokens((0..cfg.vocab_size).map(|i| format!("w{i}")))?;
    let model = Model::<f64>::new(cfg.variant, train, cfg.feature_dim, tokens, vec!["only".into()])?;

    let mut rng = Rng::seed_from_u64(derive_seed(cfg.seed, "audit-data"));
    let snippets: Vec<Tensor<f64>> = (0..cfg.batch)
        .map(|_| gaussian(&mut rng, &[cfg.segments, cfg.feature_dim]))
        .collect();
    let docs: Vec<PlotDocument> = (0..cfg.batch)
        .map(|_| {
            let sentences = (0..rng.random_range(1..4))
                .map(|_| (0..rng.random_range(1..6)).map(|_| rng.random_range(0..cfg.vocab_size)).collect())
                .collect();
            PlotDocument::new(sentences)
        })
        .collect::<Result<_>>()?;
    let negatives: Vec<usize> = (0..cfg.batch).map(|i| (i + 1) % cfg.batch).collect();
    let mut memory = model.memory.clone();
    memory.memory = gaussian(&mut rng, &[cfg.memory_slots, cfg.model_dim]).scale(cfg.memory_scale);

    let f = |graph: &mut crate::tensor_core::Graph<f64>, b: &crate::tensor_core::Bindings| {
        let mut stats = model.norm_stats.clone();
        let mut gm = (model.variant == ModelVariant::SemNet).then(|| GraphMemory::attach(graph, &memory));
        let mut write_rng = Rng::seed_from_u64(0);
        batch_loss(
            graph,
            &model,
            b,
            snippets.clone(),
            docs.iter().collect(),
            &negatives,
            &mut stats,
            gm.as_mut(),
            &mut write_rng,
        )
    };
    let loss = {
        let mut g = crate::tensor_core::Graph::new();
        let b = model.params.bind_frozen(&mut g);
        let l = f(&mut g, &b)?;
        g.scalar(l)
    };
    let report = grad_check(f, &model.params, cfg.step)?;
    let grad_magnitude = report
        .analytic
        .iter()
        .map(|(k, t)| (k.clone(), t.max_abs()))
        .collect();
    Ok(AuditReport {
        max_rel_error: report.max_rel_error,
        worst: report.worst,
        per_param: report.per_param,
        coordinates: report.coordinates,
        parameters: model.params.len(),
        loss,
        elapsed: start.elapsed(),
        grad_magnitude,
    })
}
