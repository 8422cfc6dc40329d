//! JSON run configuration shared by the command-line subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SyntheticSpec;
use crate::error::{Error, Result};
use crate::evaluation::ProbeConfig;
use crate::model::{AuditConfig, ModelVariant, TrainConfig};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed. When set, every component seed is derived from it.
    pub seed: Option<u64>,
    pub variant: ModelVariant,
    pub train: TrainConfig,
    pub synthetic: SyntheticSpec,
    pub probe: ProbeConfig,
    pub audit: AuditConfig,
    pub retrieval_ks: Vec<usize>,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            variant: ModelVariant::SemNet,
            train: TrainConfig::default(),
            synthetic: SyntheticSpec::default(),
            probe: ProbeConfig::default(),
            audit: AuditConfig::default(),
            retrieval_ks: vec![1, 5, 10],
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates a config document; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Schema {
            line: e.line(),
            message: e.to_string(),
        })?;
        let cfg = cfg.resolved();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::MissingFile {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            Error::Schema { line, message } => Error::Schema {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })
    }

    /// Applies a root seed (when present) to every component.
    pub fn resolved(mut self) -> Self {
        if let Some(root) = self.seed {
            self.train.seed = derive_seed(root, "train");
            self.train.split_seed = derive_seed(root, "split");
            self.synthetic.seed = derive_seed(root, "synthetic");
            self.probe.seed = derive_seed(root, "probe");
            self.audit.seed = derive_seed(root, "audit");
        }
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self.resolved()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synthetic.validate()?;
        if self.retrieval_ks.contains(&0) {
            return Err(Error::Config("retrieval_ks entries must be positive".into()));
        }
        Ok(())
    }
}
