//! Checkpoints: a tensor container holding every parameter plus the batch-norm
//! statistics and memory state, and a JSON sidecar with the metadata needed to
//! rebuild the model.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelVariant, TrainConfig};
use crate::encoders::TokenIndex;
use crate::error::{Error, Result};
use crate::memory::MemoryState;
use crate::scalar::Scalar;
use crate::tensor_core::{Container, RunningStats, Tensor};

pub const STATE_BN_MEAN: &str = "state.bn.mean";
pub const STATE_BN_VAR: &str = "state.bn.var";
pub const STATE_MEMORY: &str = "state.memory";
pub const STATE_AGES: &str = "state.ages";
pub const STATE_CONTEXT: &str = "state.context";
pub const STATE_STEP: &str = "state.step";

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub version: u32,
    pub variant: ModelVariant,
    pub feature_dim: usize,
    pub model_dim: usize,
    pub vocab_size: usize,
    pub config_hash: String,
    pub epochs_trained: usize,
    pub config: TrainConfig,
    pub tokens: Vec<String>,
    pub genres: Vec<String>,
}

/// `model.vsnt` → `model.vsnt.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// SHA-256 over the canonical JSON form of a training configuration.
pub fn config_hash(config: &TrainConfig) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

/// SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| Error::MissingFile {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn to_container<T: Scalar>(model: &Model<T>) -> Container {
    let mut c = Container::new();
    for (name, p) in model.params.iter() {
        c.push(name, &p.value);
    }
    c.push(STATE_BN_MEAN, &model.norm_stats.mean);
    c.push(STATE_BN_VAR, &model.norm_stats.var);
    c.push(STATE_MEMORY, &model.memory.memory);
    let ages: Vec<f64> = model.memory.ages.iter().map(|&a| a as f64).collect();
    c.push(STATE_AGES, &Tensor::vector(ages));
    c.push(STATE_CONTEXT, &model.memory.context);
    c.push(STATE_STEP, &Tensor::vector(vec![model.memory.step as f64]));
    c
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<CheckpointMeta> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    to_container(model).write(path)?;
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        variant: model.variant,
        feature_dim: model.feature_dim,
        model_dim: model.dim(),
        vocab_size: model.tokens.len(),
        config_hash: config_hash(&model.config)?,
        epochs_trained: model.epochs_trained,
        config: model.config.clone(),
        tokens: model.tokens.tokens().to_vec(),
        genres: model.genres.clone(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}

fn expect_shape<T: Scalar>(name: &str, t: &Tensor<T>, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::Format(format!(
            "checkpoint entry {name:?} has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|source| Error::MissingFile { path: side.clone(), source })?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", meta.version)));
    }
    if config_hash(&meta.config)? != meta.config_hash {
        return Err(Error::Format("checkpoint config hash does not match its config".into()));
    }
    let container = Container::read(path)?;
    let tokens = TokenIndex::from_tokens(meta.tokens.iter().cloned())?;
    let mut model = Model::<T>::new(meta.variant, meta.config, meta.feature_dim, tokens, meta.genres)?;
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    for name in &names {
        let value: Tensor<T> = container
            .get(name)
            .map_err(|_| Error::Format(format!("checkpoint lacks parameter {name:?}")))?;
        let slot = model.params.get_mut(name)?;
        expect_shape(name, &value, slot.shape())?;
        *slot = value;
    }
    let known = names.len() + 6;
    if container.entries().len() != known {
        return Err(Error::Format(format!(
            "checkpoint has {} entries, the {} variant expects {known}",
            container.entries().len(),
            meta.variant
        )));
    }
    let f = meta.feature_dim;
    let (m, d) = (model.memory.slots(), model.dim());
    let mean: Tensor<T> = container.get(STATE_BN_MEAN)?;
    let var: Tensor<T> = container.get(STATE_BN_VAR)?;
    expect_shape(STATE_BN_MEAN, &mean, &[f])?;
    expect_shape(STATE_BN_VAR, &var, &[f])?;
    model.norm_stats = RunningStats { mean, var };
    let memory: Tensor<T> = container.get(STATE_MEMORY)?;
    expect_shape(STATE_MEMORY, &memory, &[m, d])?;
    let ages: Tensor<f64> = container.get(STATE_AGES)?;
    expect_shape(STATE_AGES, &ages, &[m])?;
    let context: Tensor<T> = container.get(STATE_CONTEXT)?;
    expect_shape(STATE_CONTEXT, &context, &[d])?;
    let step: Tensor<f64> = container.get(STATE_STEP)?;
    expect_shape(STATE_STEP, &step, &[1])?;
    model.memory = MemoryState {
        memory,
        ages: ages.data().iter().map(|&a| a as u64).collect(),
        context,
        step: step.data()[0] as u64,
    };
    model.epochs_trained = meta.epochs_trained;
    Ok(model)
}
