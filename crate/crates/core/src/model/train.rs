use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};

use super::{
    forward_batch, triplet_loss_graph, BatchInput, Model, ModelVariant, PassOptions, TrainConfig, TRAIN_COSINE_EPS,
};
use crate::corpus::{split_train_test, Corpus, SampleMode, Split};
use crate::encoders::PlotDocument;
use crate::error::{Error, Result};
use crate::memory::GraphMemory;
use crate::rng::{derive_seed, Rng};
use crate::scalar::Scalar;
use crate::tensor_core::{clip_global_norm, Bindings, Graph, NormMode, Optimizer, RunningStats, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Mean triplet loss of every epoch.
    pub loss_curve: Vec<f64>,
    pub optimizer_steps: u64,
    /// Global gradient norm before clipping, per step.
    pub grad_norms: Vec<f64>,
}

/// Picks, for every position of a batch of `b`, a different position uniformly.
pub fn sample_negatives(b: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if b < 2 {
        return Err(Error::NegativeSampling(format!(
            "a batch of {b} item has no other item to use as a negative"
        )));
    }
    Ok((0..b)
        .map(|i| {
            let j = rng.random_range(0..b - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        })
        .collect())
}

/// Mean triplet loss over a batch, recorded on `graph`. `memory` carries the
/// SemNet memory through the batch; it must be attached to `graph`.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss<T: Scalar>(
    graph: &mut Graph<T>,
    model: &Model<T>,
    bindings: &Bindings,
    snippets: Vec<Tensor<T>>,
    documents: Vec<&PlotDocument>,
    negatives: &[usize],
    norm_stats: &mut RunningStats<T>,
    memory: Option<&mut GraphMemory>,
    write_rng: &mut Rng,
) -> Result<Var> {
    let b = snippets.len();
    if negatives.len() != b {
        return Err(Error::Contract("one negative per batch item".into()));
    }
    let input = BatchInput { snippets, documents };
    let out = forward_batch(
        graph,
        model,
        bindings,
        &input,
        norm_stats,
        memory,
        &mut PassOptions {
            norm_mode: NormMode::Train,
            write_memory: true,
            per_item_snapshot: false,
            write_rng,
        },
    )?;
    let margin = T::of(model.config.margin);
    let eps = T::of(TRAIN_COSINE_EPS);
    let mut terms = Vec::with_capacity(b);
    for (i, &j) in negatives.iter().enumerate() {
        if j == i || j >= b {
            return Err(Error::NegativeSampling(format!("negative {j} invalid for item {i}")));
        }
        terms.push(triplet_loss_graph(graph, out.videos[i], out.plots[i], out.plots[j], margin, eps)?);
    }
    let total = graph.sum(&terms)?;
    Ok(graph.scale(total, T::of(1.0 / b as f64)))
}

/// Splits `n` shuffled positions into batches of `size`; a trailing batch of
/// one is folded into the previous batch.
pub fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

/// The genre-stratified train/test split every subcommand agrees on.
pub fn holdout_split(corpus: &Corpus, cfg: &TrainConfig) -> Result<Split> {
    split_train_test(&corpus.genre_labels(), cfg.train_fraction, cfg.split_seed)
}

/// Trains `model` on every item of `corpus` with one optimizer step per batch.
/// `on_epoch` sees each epoch index and its mean loss.
pub fn train<T: Scalar>(model: &mut Model<T>, corpus: &Corpus, mut on_epoch: impl FnMut(usize, f64)) -> Result<TrainOutcome> {
    let cfg = model.config.clone();
    if corpus.len() < 2 {
        return Err(Error::NegativeSampling(format!(
            "training needs at least 2 items for in-batch negatives, got {}",
            corpus.len()
        )));
    }
    if corpus.feature_dim() != Some(model.feature_dim) {
        return Err(Error::Config(format!(
            "corpus feature dimension {:?} does not match the model's {}",
            corpus.feature_dim(),
            model.feature_dim
        )));
    }
    let docs = corpus
        .items
        .iter()
        .map(|it| model.document(it))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = Rng::seed_from_u64(derive_seed(cfg.seed, "train"));
    let mut write_rng = Rng::seed_from_u64(derive_seed(cfg.seed, "memory-writes"));
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut outcome = TrainOutcome {
        loss_curve: Vec::with_capacity(cfg.epochs),
        optimizer_steps: 0,
        grad_norms: Vec::new(),
    };
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 0..cfg.epochs {
        if cfg.reset_memory_each_epoch && model.variant == ModelVariant::SemNet {
            model
                .memory
                .reset(cfg.memory_reset, derive_seed(cfg.seed, &format!("memory-reset-{epoch}")));
        }
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in batches(&order, cfg.batch_size) {
            let mut graph = Graph::new();
            let bindings = model.params.bind(&mut graph);
            let snippets = batch
                .iter()
                .map(|&i| model.snippets(&corpus.items[i], SampleMode::Train, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let documents: Vec<&PlotDocument> = batch.iter().map(|&i| &docs[i]).collect();
            let negatives = sample_negatives(batch.len(), &mut rng)?;
            let mut stats = model.norm_stats.clone();
            let mut memory =
                (model.variant == ModelVariant::SemNet).then(|| GraphMemory::attach(&mut graph, &model.memory));
            let loss = batch_loss(
                &mut graph,
                model,
                &bindings,
                snippets,
                documents,
                &negatives,
                &mut stats,
                memory.as_mut(),
                &mut write_rng,
            )?;
            let value = graph.scalar(loss).to_f64_lossy();
            if !value.is_finite() {
                return Err(Error::NumericDomain { op: "triplet loss" });
            }
            let mut grads = graph.backward(loss)?;
            let mut grads = bindings.collect_grads(&graph, &mut grads);
            let norm = clip_global_norm(&mut grads, cfg.clip_norm);
            optimizer.apply(&mut model.params, &grads)?;
            model.norm_stats = stats;
            if let Some(m) = memory {
                model.memory = m.detach(&graph);
            }
            outcome.grad_norms.push(norm);
            loss_sum += value * batch.len() as f64;
            debug!("epoch {epoch} batch of {} loss {value:.5} grad norm {norm:.4}", batch.len());
        }
        let mean = loss_sum / corpus.len() as f64;
        info!("epoch {} mean loss {mean:.5}", epoch + 1);
        outcome.loss_curve.push(mean);
        model.epochs_trained += 1;
        on_epoch(epoch, mean);
    }
    outcome.optimizer_steps = optimizer.steps();
    Ok(outcome)
}
