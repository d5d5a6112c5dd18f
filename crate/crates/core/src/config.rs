//! The run configuration: every stage's settings plus the global seed, read
//! from TOML with unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{EvalContext, SplitSpec};
use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::experiments::SensitivityConfig;
use crate::modelpool::PoolConfig;
use crate::preprocess::{HampelConfig, MmdConfig, ReliefFConfig};
use crate::train::{LossConfig, TrainConfig};
use crate::transfer::TransferConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Candidate source station CSVs.
    pub sources: Vec<PathBuf>,
    /// Few-shot target station CSV.
    pub target: Option<PathBuf>,
    pub large_split: SplitSpec,
    pub small_split: SplitSpec,
    pub eval_context: EvalContext,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            sources: Vec::new(),
            target: None,
            large_split: SplitSpec::LARGE,
            small_split: SplitSpec::SMALL,
            eval_context: EvalContext::Segment,
        }
    }
}

/// Architecture switches. Turning one off gives the matching ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOptions {
    pub head_hidden: usize,
    /// Hampel is always applied; this controls ReliefF feature selection.
    pub feature_engineering: bool,
    pub fusion: bool,
    pub weighted: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            head_hidden: 64,
            feature_engineering: true,
            fusion: true,
            weighted: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub mmd: MmdConfig,
    pub hampel: HampelConfig,
    pub relieff: ReliefFConfig,
    pub pool: PoolConfig,
    pub ensemble: EnsembleConfig,
    pub model: ModelOptions,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub transfer: TransferConfig,
    pub sensitivity: SensitivityConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.mmd.validate()?;
        self.hampel.validate()?;
        self.relieff.validate()?;
        self.pool.validate()?;
        self.ensemble.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.transfer.validate(&self.data.small_split)?;
        for (name, values) in [
            ("max_epoch", &self.sensitivity.max_epoch),
            ("look_back", &self.sensitivity.look_back),
            ("batch_size", &self.sensitivity.batch_size),
        ] {
            if values.contains(&0) {
                return Err(Error::Config(format!(
                    "sensitivity.{name} values must be at least 1"
                )));
            }
        }
        if self.model.head_hidden == 0 {
            return Err(Error::Config("model.head_hidden must be at least 1".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("run config serialises");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
