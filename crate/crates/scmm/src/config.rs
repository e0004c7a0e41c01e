//! The JSON run configuration shared by the training subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scmm_core::corpus::AlignmentPolicy;
use scmm_core::network::NetworkConfig;
use scmm_core::training::{FinetuneConfig, PretrainConfig};

use crate::error::{Error, Result};

/// Everything a pre-train / fine-tune run needs. Absent keys take their
/// defaults; unknown keys are rejected. Channel, band and class counts of
/// `network` are always taken from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub network: NetworkConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub pretrain_corpus: Option<PathBuf>,
    pub finetune_corpus: Option<PathBuf>,
    /// Forces an alignment policy; by default it follows from the channel lists.
    pub alignment: Option<AlignmentPolicy>,
    pub finetune_trials_per_session: usize,
    pub split_seed: u64,
    /// Fine-tune subjects; empty means all.
    pub subjects: Vec<usize>,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            pretrain_corpus: None,
            finetune_corpus: None,
            alignment: None,
            finetune_trials_per_session: 9,
            split_seed: 0,
            subjects: Vec::new(),
            output_dir: None,
        }
    }
}

impl RunConfigFile {
    /// Reads a config file; relative corpus paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| {
            if e.is_io() {
                Error::json(path)(e)
            } else {
                Error::Usage(format!("{}: {e}", path.display()))
            }
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.pretrain_corpus, &mut cfg.finetune_corpus, &mut cfg.output_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        fs::write(path, text).map_err(Error::io(path))
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if self.network.encoder.len() != 3 || self.network.embedding_dim < 2 {
            return Err(Error::Usage("network needs 3 encoder stages and embedding_dim >= 2".into()));
        }
        Ok(())
    }

    pub fn require_pretrain_corpus(&self) -> Result<&Path> {
        self.pretrain_corpus
            .as_deref()
            .ok_or_else(|| Error::Usage("config has no pretrain_corpus".into()))
    }

    pub fn require_finetune_corpus(&self) -> Result<&Path> {
        self.finetune_corpus
            .as_deref()
            .ok_or_else(|| Error::Usage("config has no finetune_corpus".into()))
    }
}
