//! The three model variants, the ranking loss, training, checkpoints and
//! retrieval scoring.
//!
//! * SSM: `R_V = W_p · mean_t(x_t)`.
//! * SLM: `R_V = s_T` from the semantic learner.
//! * SemNet: `R_V = tanh(W_sv [s_T; v])` after one memory cycle.

mod audit;
mod checkpoint;
mod retrieval;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

pub use audit::{gradient_audit, AuditConfig, AuditReport};
pub use checkpoint::{config_hash, file_hash, load_checkpoint, save_checkpoint, sidecar_path, CheckpointMeta};
pub use retrieval::{recall_at_k, retrieval_eval};
pub use train::{batch_loss, batches, holdout_split, sample_negatives, train, TrainOutcome};

use crate::corpus::{sample_segments, Corpus, LoadedItem, SampleMode};
use crate::encoders::{encode_plot_graph, PlotDocument, TokenIndex};
use crate::error::{Error, Result};
use crate::memory::{self, GraphMemory, MemoryState, ReadMode, ResetPolicy};
use crate::rng::{derive_seed, Rng};
use crate::scalar::Scalar;
use crate::semantic_learner::{self, ConvLayer, ConvStackConfig};
use crate::tensor_core::{
    ops, ActivationKind, Bindings, Graph, Init, NormMode, OptimizerKind, ParameterStore, RunningStats, Tensor, Var,
};

pub const BN_GAMMA: &str = "features.bn.gamma";
pub const BN_BETA: &str = "features.bn.beta";
pub const WORD_EMBEDDINGS: &str = "plot.embeddings";
pub const PLOT_PROJECTION: &str = "plot.projection";
pub const SSM_PROJECTION: &str = "ssm.projection";
pub const FUSION: &str = "fusion.w_sv";

/// Norm floor used by the training loss so degenerate vectors do not abort a run.
pub const TRAIN_COSINE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum ModelVariant {
    #[serde(rename = "ssm")]
    Ssm,
    #[serde(rename = "slm")]
    Slm,
    #[serde(rename = "semnet")]
    SemNet,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 3] = [ModelVariant::Ssm, ModelVariant::Slm, ModelVariant::SemNet];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Ssm => "ssm",
            ModelVariant::Slm => "slm",
            ModelVariant::SemNet => "semnet",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelVariant::Ssm => "SSM",
            ModelVariant::Slm => "SLM",
            ModelVariant::SemNet => "Video SemNet",
        }
    }

    fn uses_learner(self) -> bool {
        self != ModelVariant::Ssm
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssm" => Ok(ModelVariant::Ssm),
            "slm" => Ok(ModelVariant::Slm),
            "semnet" => Ok(ModelVariant::SemNet),
            other => Err(Error::Config(format!("unknown variant {other:?}; expected ssm, slm or semnet"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSampling {
    /// A uniformly chosen other item of the same batch.
    #[default]
    InBatchUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Snippets sampled per video.
    pub segments: usize,
    pub model_dim: usize,
    pub word_dim: usize,
    pub descriptors: usize,
    pub memory_slots: usize,
    pub read_mode: ReadMode,
    pub negative_sampling: NegativeSampling,
    pub optimizer: OptimizerKind,
    pub clip_norm: f64,
    /// Filter counts of the conv layers before the last one (which has
    /// `model_dim` filters).
    pub conv_filters: Vec<usize>,
    pub conv_kernel: usize,
    pub activation: ActivationKind,
    pub r_max: usize,
    pub memory_reset: ResetPolicy,
    pub reset_memory_each_epoch: bool,
    /// Keep writing memory at inference time instead of reading a frozen snapshot.
    pub eval_writes: bool,
    pub train_fraction: f64,
    /// Seed of the stratified train/test split.
    pub split_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 0.2,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 16,
            seed: 7,
            segments: 16,
            model_dim: 32,
            word_dim: 32,
            descriptors: 8,
            memory_slots: 16,
            read_mode: ReadMode::Hard,
            negative_sampling: NegativeSampling::InBatchUniform,
            optimizer: OptimizerKind::Adam,
            clip_norm: 5.0,
            conv_filters: vec![128],
            conv_kernel: 3,
            activation: ActivationKind::Relu,
            r_max: 0,
            memory_reset: ResetPolicy::SeededRandom,
            reset_memory_each_epoch: true,
            eval_writes: false,
            train_fraction: 0.8,
            split_seed: 2018,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.margin > 0.0) {
            return fail(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.learning_rate > 0.0) {
            return fail(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size < 2 {
            return fail(format!("batch size must be at least 2 for in-batch negatives, got {}", self.batch_size));
        }
        for (name, v) in [
            ("segments", self.segments),
            ("model_dim", self.model_dim),
            ("word_dim", self.word_dim),
            ("descriptors", self.descriptors),
            ("memory_slots", self.memory_slots),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.r_max >= self.memory_slots {
            return fail(format!("r_max {} must be below memory_slots {}", self.r_max, self.memory_slots));
        }
        if !(self.clip_norm > 0.0) {
            return fail("clip_norm must be positive".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        self.conv_stack(1).validate()?;
        let min = self.conv_stack(1).min_len();
        if self.segments < min {
            return fail(format!(
                "{} segments are too few for {} conv layers; need at least {min}",
                self.segments,
                self.conv_filters.len() + 1
            ));
        }
        Ok(())
    }

    pub fn conv_stack(&self, input_dim: usize) -> ConvStackConfig {
        let layers = self
            .conv_filters
            .iter()
            .chain(std::iter::once(&self.model_dim))
            .map(|&filters| ConvLayer {
                filters,
                kernel: self.conv_kernel,
            })
            .collect();
        ConvStackConfig {
            layers,
            input_dim,
            output_dim: self.model_dim,
            activation: self.activation,
        }
    }
}

/// A video representation and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEmbedding<T> {
    pub vector: Tensor<T>,
    pub variant: ModelVariant,
    pub item_id: String,
}

/// Trainable parameters plus the non-trainable state a variant carries.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub variant: ModelVariant,
    pub config: TrainConfig,
    pub feature_dim: usize,
    pub params: ParameterStore<T>,
    pub norm_stats: RunningStats<T>,
    pub memory: MemoryState<T>,
    pub tokens: TokenIndex,
    pub genres: Vec<String>,
    pub epochs_trained: usize,
}

impl<T: Scalar> Model<T> {
    pub fn new(
        variant: ModelVariant,
        config: TrainConfig,
        feature_dim: usize,
        tokens: TokenIndex,
        genres: Vec<String>,
    ) -> Result<Self> {
        config.validate()?;
        if tokens.is_empty() {
            return Err(Error::Vocabulary("no plot tokens to embed".into()));
        }
        let seed = derive_seed(config.seed, "params");
        let d = config.model_dim;
        let mut params = ParameterStore::new();
        params.register(BN_GAMMA, &[feature_dim], Init::Ones)?;
        params.register(BN_BETA, &[feature_dim], Init::Zeros)?;
        params.register(
            WORD_EMBEDDINGS,
            &[tokens.len(), config.word_dim],
            Init::Normal {
                std: 1.0 / (config.word_dim as f64).sqrt(),
                seed: derive_seed(seed, WORD_EMBEDDINGS),
            },
        )?;
        if config.word_dim != d {
            params.register(
                PLOT_PROJECTION,
                &[d, config.word_dim],
                Init::Normal {
                    std: 1.0 / (config.word_dim as f64).sqrt(),
                    seed: derive_seed(seed, PLOT_PROJECTION),
                },
            )?;
        }
        match variant {
            ModelVariant::Ssm => params.register(
                SSM_PROJECTION,
                &[d, feature_dim],
                Init::Normal {
                    std: 1.0 / (feature_dim as f64).sqrt(),
                    seed: derive_seed(seed, SSM_PROJECTION),
                },
            )?,
            ModelVariant::Slm | ModelVariant::SemNet => {
                config.conv_stack(feature_dim).register(&mut params, derive_seed(seed, "conv"))?;
                semantic_learner::register_summarizer(&mut params, d, config.descriptors, derive_seed(seed, "summarizer"))?;
            }
        }
        if variant == ModelVariant::SemNet {
            memory::register_memory(&mut params, d, derive_seed(seed, "memory"))?;
            params.register(
                FUSION,
                &[d, 2 * d],
                Init::Normal {
                    std: 1.0 / ((2 * d) as f64).sqrt(),
                    seed: derive_seed(seed, FUSION),
                },
            )?;
        }
        let mut memory = MemoryState::zeros(config.memory_slots, d);
        memory.reset(config.memory_reset, derive_seed(config.seed, "memory-reset"));
        Ok(Model {
            variant,
            feature_dim,
            params,
            norm_stats: RunningStats::new(feature_dim),
            memory,
            tokens,
            genres,
            epochs_trained: 0,
            config,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.model_dim
    }

    pub fn document(&self, item: &LoadedItem) -> Result<PlotDocument> {
        PlotDocument::from_text(&item.plot_text, &self.tokens)
    }

    /// Snippet matrix (`L×F`) for an item.
    pub fn snippets(&self, item: &LoadedItem, mode: SampleMode, rng: &mut Rng) -> Result<Tensor<T>> {
        if item.features.feature_dim() != self.feature_dim {
            return Err(Error::dim(
                "snippet features",
                &[self.feature_dim],
                &[item.features.feature_dim()],
            ));
        }
        let idx = sample_segments(item.features.num_frames(), self.config.segments, mode, rng);
        Ok(item.features.select(&idx)?.cast())
    }
}

/// Per-batch graph inputs for [`forward_batch`].
pub struct BatchInput<'a, T> {
    pub snippets: Vec<Tensor<T>>,
    pub documents: Vec<&'a PlotDocument>,
}

/// Graph outputs of one batch.
pub struct BatchOutput {
    pub videos: Vec<Var>,
    pub plots: Vec<Var>,
    pub read_indices: Vec<Option<usize>>,
    pub write_indices: Vec<Option<usize>>,
}

/// Options that differ between training and inference passes.
pub struct PassOptions<'r> {
    pub norm_mode: NormMode,
    pub write_memory: bool,
    /// Attach the memory snapshot afresh for every item instead of streaming.
    pub per_item_snapshot: bool,
    pub write_rng: &'r mut Rng,
}

/// Records the forward pass of a batch on `graph`: batch-normalized snippet
/// features, one video embedding per item (memory cycles in item order) and
/// one plot embedding per item.
pub fn forward_batch<T: Scalar>(
    graph: &mut Graph<T>,
    model: &Model<T>,
    bindings: &Bindings,
    input: &BatchInput<'_, T>,
    norm_stats: &mut RunningStats<T>,
    memory: Option<&mut GraphMemory>,
    opts: &mut PassOptions<'_>,
) -> Result<BatchOutput> {
    let b = input.snippets.len();
    if b == 0 || input.documents.len() != b {
        return Err(Error::Contract("batch needs one plot per video".into()));
    }
    let l = model.config.segments;
    let f = model.feature_dim;
    let mut stacked = Vec::with_capacity(b * l * f);
    for s in &input.snippets {
        if s.shape() != [l, f] {
            return Err(Error::dim("batch snippets", &[l, f], s.shape()));
        }
        stacked.extend_from_slice(s.data());
    }
    let x = graph.constant(Tensor::new(vec![b * l, f], stacked)?);
    let normed = graph.batchnorm(x, bindings.var(BN_GAMMA)?, bindings.var(BN_BETA)?, norm_stats, opts.norm_mode)?;

    let needs_memory = model.variant == ModelVariant::SemNet;
    if needs_memory && memory.is_none() && !opts.per_item_snapshot {
        return Err(Error::Contract("the SemNet variant needs a memory state".into()));
    }
    let mut memory = memory;
    let mut out = BatchOutput {
        videos: Vec::with_capacity(b),
        plots: Vec::with_capacity(b),
        read_indices: Vec::with_capacity(b),
        write_indices: Vec::with_capacity(b),
    };
    for i in 0..b {
        let xi = graph.slice_rows(normed, i * l, l)?;
        let (video, read_idx, write_idx) = match model.variant {
            ModelVariant::Ssm => {
                let mean = graph.mean_rows(xi)?;
                (graph.matmul(bindings.var(SSM_PROJECTION)?, mean)?, None, None)
            }
            ModelVariant::Slm => (learner_summary(graph, model, bindings, xi)?, None, None),
            ModelVariant::SemNet => {
                let s = learner_summary(graph, model, bindings, xi)?;
                let mut snapshot;
                let mem: &mut GraphMemory = if opts.per_item_snapshot {
                    snapshot = GraphMemory::attach(graph, &model.memory);
                    &mut snapshot
                } else {
                    memory.as_deref_mut().expect("checked above")
                };
                let read = mem.read(graph, s, bindings, model.config.read_mode)?;
                let joined = graph.concat(&[s, read.vector])?;
                let fused = graph.matmul(bindings.var(FUSION)?, joined)?;
                let rv = graph.tanh(fused)?;
                mem.update_context(graph, read.vector, s, bindings)?;
                let written = if opts.write_memory {
                    Some(mem.write(graph, bindings, opts.write_rng, model.config.r_max)?)
                } else {
                    mem.finish_without_write();
                    None
                };
                (rv, read.index, written)
            }
        };
        out.videos.push(video);
        out.read_indices.push(read_idx);
        out.write_indices.push(write_idx);
    }
    let table = bindings.var(WORD_EMBEDDINGS)?;
    let proj = if model.params.contains(PLOT_PROJECTION) {
        Some(bindings.var(PLOT_PROJECTION)?)
    } else {
        None
    };
    for doc in &input.documents {
        out.plots.push(encode_plot_graph(graph, doc, table, proj)?);
    }
    Ok(out)
}

fn learner_summary<T: Scalar>(graph: &mut Graph<T>, model: &Model<T>, bindings: &Bindings, x: Var) -> Result<Var> {
    debug_assert!(model.variant.uses_learner());
    let cfg = model.config.conv_stack(model.feature_dim);
    let h = semantic_learner::conv_stack_graph(graph, x, &cfg, bindings)?;
    let (s, _) = semantic_learner::summarize_graph(
        graph,
        h,
        bindings.var(semantic_learner::DESCRIPTORS)?,
        bindings.var(semantic_learner::DESCRIPTOR_WEIGHTS)?,
    )?;
    Ok(s)
}

/// `max(0, cos(v, n) - cos(v, p) + margin)` with strict cosine.
pub fn triplet_loss<T: Scalar>(video: &Tensor<T>, positive: &Tensor<T>, negative: &Tensor<T>, margin: T) -> Result<T> {
    let sp = ops::cosine_similarity(video, positive)?;
    let sn = ops::cosine_similarity(video, negative)?;
    Ok((sn - sp + margin).max(T::zero()))
}

pub fn triplet_loss_graph<T: Scalar>(
    graph: &mut Graph<T>,
    video: Var,
    positive: Var,
    negative: Var,
    margin: T,
    eps: T,
) -> Result<Var> {
    let sp = graph.cosine(video, positive, eps)?;
    let sn = graph.cosine(video, negative, eps)?;
    let diff = graph.sub(sn, sp)?;
    let shifted = graph.add_scalar(diff, margin);
    graph.relu(shifted)
}

/// Inference-time embeddings for a whole corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEmbeddings<T> {
    pub ids: Vec<String>,
    /// `n×d` video embeddings.
    pub videos: Tensor<T>,
    /// `n×d` plot embeddings.
    pub plots: Tensor<T>,
}

impl<T: Scalar> Model<T> {
    /// Eval-mode embedding of one item: midpoint sampling, running batch-norm
    /// statistics. SemNet reads from `memory` (and writes to it only when
    /// `eval_writes` is set).
    pub fn embed_item(&self, item: &LoadedItem, memory: Option<&mut MemoryState<T>>) -> Result<VideoEmbedding<T>> {
        if self.variant == ModelVariant::SemNet && memory.is_none() {
            return Err(Error::Contract("the SemNet variant needs a memory state".into()));
        }
        let mut rng = Rng::seed_from_u64(0);
        let snippets = self.snippets(item, SampleMode::Eval, &mut rng)?;
        let doc = self.document(item)?;
        let mut graph = Graph::new();
        let bindings = self.params.bind_frozen(&mut graph);
        let mut stats = self.norm_stats.clone();
        let mut write_rng = Rng::seed_from_u64(derive_seed(self.config.seed, "eval-writes"));
        let input = BatchInput {
            snippets: vec![snippets],
            documents: vec![&doc],
        };
        let mut gm = memory.as_deref().map(|m| GraphMemory::attach(&mut graph, m));
        let out = forward_batch(
            &mut graph,
            self,
            &bindings,
            &input,
            &mut stats,
            gm.as_mut(),
            &mut PassOptions {
                norm_mode: NormMode::Eval,
                write_memory: self.config.eval_writes,
                per_item_snapshot: false,
                write_rng: &mut write_rng,
            },
        )?;
        if let (Some(gm), Some(mem)) = (gm, memory) {
            *mem = gm.detach(&graph);
        }
        Ok(VideoEmbedding {
            vector: graph.value(out.videos[0]).clone(),
            variant: self.variant,
            item_id: item.id.clone(),
        })
    }

    /// Embeds every item in eval mode. Without `eval_writes`, each SemNet
    /// item reads from the stored memory snapshot, so results do not depend
    /// on item order.
    pub fn embed_corpus(&self, corpus: &Corpus) -> Result<CorpusEmbeddings<T>> {
        if let Some(f) = corpus.feature_dim() {
            if f != self.feature_dim {
                return Err(Error::Config(format!(
                    "corpus features have dimension {f}, checkpoint expects {}",
                    self.feature_dim
                )));
            }
        }
        let mut videos = Vec::with_capacity(corpus.len());
        let mut plots = Vec::with_capacity(corpus.len());
        let mut stream = self.memory.clone();
        let mut write_rng = Rng::seed_from_u64(derive_seed(self.config.seed, "eval-writes"));
        for item in &corpus.items {
            let doc = self.document(item)?;
            let mut graph = Graph::new();
            let bindings = self.params.bind_frozen(&mut graph);
            let mut stats = self.norm_stats.clone();
            let mut rng = Rng::seed_from_u64(0);
            let input = BatchInput {
                snippets: vec![self.snippets(item, SampleMode::Eval, &mut rng)?],
                documents: vec![&doc],
            };
            let mut gm = (self.config.eval_writes && self.variant == ModelVariant::SemNet)
                .then(|| GraphMemory::attach(&mut graph, &stream));
            let out = forward_batch(
                &mut graph,
                self,
                &bindings,
                &input,
                &mut stats,
                gm.as_mut(),
                &mut PassOptions {
                    norm_mode: NormMode::Eval,
                    write_memory: self.config.eval_writes,
                    per_item_snapshot: !self.config.eval_writes,
                    write_rng: &mut write_rng,
                },
            )?;
            if let Some(gm) = gm {
                stream = gm.detach(&graph);
            }
            videos.push(graph.value(out.videos[0]).data().to_vec());
            plots.push(graph.value(out.plots[0]).data().to_vec());
        }
        Ok(CorpusEmbeddings {
            ids: corpus.items.iter().map(|i| i.id.clone()).collect(),
            videos: Tensor::from_rows(&videos)?,
            plots: Tensor::from_rows(&plots)?,
        })
    }
}
