//! Model checkpoints: parameters in the ndgrad container, everything needed
//! to rebuild and re-evaluate the model in its JSON metadata.

use std::path::Path;

use ndgrad::ParamStore;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{make_windows, NormalizerParams, SplitSpec, StationSeries};
use crate::error::{Error, Result};
use crate::model::{IdsNetModel, ModelSpec};
use crate::output::write_atomic;
use crate::pipeline::{correct_train, select_named};
use crate::train::{evaluate_model, EpochStats, MetricsReport};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    version: u32,
    config: RunConfig,
    spec: ModelSpec,
    station: String,
    feature_names: Vec<String>,
    normalizer: NormalizerParams,
    split: SplitSpec,
    history: Vec<EpochStats>,
    digest: Option<MetricsReport>,
}

/// A trained model with the data geometry it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: IdsNetModel,
    /// Station the model was last trained on.
    pub station: String,
    pub feature_names: Vec<String>,
    pub normalizer: NormalizerParams,
    pub split: SplitSpec,
    pub history: Vec<EpochStats>,
    /// Test metrics at save time.
    pub digest: Option<MetricsReport>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Meta {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            spec: self.model.spec.clone(),
            station: self.station.clone(),
            feature_names: self.feature_names.clone(),
            normalizer: self.normalizer.clone(),
            split: self.split,
            history: self.history.clone(),
            digest: self.digest,
        };
        let json = serde_json::to_string(&meta).expect("checkpoint metadata serialises");
        ndgrad::container::encode(&json, &self.model.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (json, params): (String, ParamStore) =
            ndgrad::container::decode(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let version: serde_json::Value =
            serde_json::from_str(&json).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        match version.get("version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!(
                    "checkpoint version {v} is not supported (expected {CHECKPOINT_VERSION})"
                )))
            }
            None => return Err(Error::Checkpoint("metadata has no version".into())),
        }
        let meta: Meta = serde_json::from_value(version)
            .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let model = IdsNetModel::from_parts(meta.spec, params)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Self {
            config: meta.config,
            model,
            station: meta.station,
            feature_names: meta.feature_names,
            normalizer: meta.normalizer,
            split: meta.split,
            history: meta.history,
            digest: meta.digest,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Test-split metrics on `series`, prepared the way the model saw it:
    /// training power Hampel-corrected, the saved feature columns, and the
    /// saved normaliser.
    pub fn evaluate(&self, series: &StationSeries) -> Result<MetricsReport> {
        let ranges = self.split.ranges(series.len())?;
        let (corrected, _) = correct_train(series, &ranges, &self.config)?;
        let selected = select_named(&corrected, &self.feature_names)?;
        let windows = make_windows(
            &selected,
            &self.split,
            self.model.spec.look_back,
            &self.normalizer,
            self.config.data.eval_context,
        )?;
        Ok(evaluate_model(&self.model, &windows.test, &self.normalizer)?.0)
    }
}
