//! Probe-and-decide transfer of a pretrained model to a few-shot station.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{SplitSpec, StationSeries};
use crate::error::{Error, Result, StageExt};
use crate::model::IdsNetModel;
use crate::pipeline::{
    prepare_source, prepare_target, pretrain, stream, train_fresh, PreparedStation,
};
use crate::preprocess::{select_source, SourceSelection};
use crate::train::{derive_seed, evaluate_model, fit, FitOutcome, MetricsReport, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    /// Raw-scale (kW) probe MAE above which the model is fine-tuned.
    pub mae_threshold: f64,
    /// Trailing test points the zero-shot probe is scored on.
    pub probe_len: usize,
    pub finetune_max_epoch: usize,
    pub finetune_batch: usize,
    pub finetune_lr_factor: f64,
    /// Also train the direct and fine-tuned variants when the decision does
    /// not call for them, so all three can be compared.
    pub all_variants: bool,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            mae_threshold: 0.2,
            probe_len: 100,
            finetune_max_epoch: 50,
            finetune_batch: 16,
            finetune_lr_factor: 0.1,
            all_variants: true,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self, small: &SplitSpec) -> Result<()> {
        if !(self.mae_threshold > 0.0 && self.mae_threshold.is_finite()) {
            return Err(Error::Config(format!(
                "transfer.mae_threshold must be positive, got {}",
                self.mae_threshold
            )));
        }
        if self.probe_len == 0 || self.probe_len > small.test_len {
            return Err(Error::Config(format!(
                "transfer.probe_len ({}) must be between 1 and the target test length ({})",
                self.probe_len, small.test_len
            )));
        }
        if self.finetune_batch == 0 {
            return Err(Error::Config(
                "transfer.finetune_batch must be at least 1".into(),
            ));
        }
        if !(self.finetune_lr_factor > 0.0 && self.finetune_lr_factor.is_finite()) {
            return Err(Error::Config(format!(
                "transfer.finetune_lr_factor must be positive, got {}",
                self.finetune_lr_factor
            )));
        }
        Ok(())
    }

    /// Fine-tuning schedule derived from the pretraining one.
    pub fn finetune_schedule(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            lr: base.lr * self.finetune_lr_factor,
            max_epoch: self.finetune_max_epoch,
            batch_size: self.finetune_batch,
            patience: None,
            ..base.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferDecision {
    pub probe_mae: f64,
    pub threshold: f64,
    pub fine_tune: bool,
}

/// Fine-tune only when the probe error strictly exceeds the threshold.
pub fn decide(probe_mae: f64, threshold: f64) -> TransferDecision {
    TransferDecision {
        probe_mae,
        threshold,
        fine_tune: probe_mae > threshold,
    }
}

/// Scores `model` zero-shot on the windows whose targets fall in the last
/// `probe_len` points of the target's test split.
pub fn probe_and_decide(
    model: &IdsNetModel,
    target: &PreparedStation,
    cfg: &TransferConfig,
) -> Result<TransferDecision> {
    let test = &target.ranges.test;
    if test.len() < cfg.probe_len {
        return Err(Error::Data(format!(
            "probe needs {} test points but the target test split has {}",
            cfg.probe_len,
            test.len()
        )));
    }
    let start = test.end - cfg.probe_len;
    let windows = &target.windows.test;
    let idx: Vec<usize> = (0..windows.len())
        .filter(|&i| windows.target_index[i] >= start)
        .collect();
    if idx.is_empty() {
        return Err(Error::Data(format!(
            "no probe windows: {} probe points cannot fill a look-back of {}",
            cfg.probe_len, windows.look_back
        )));
    }
    let probe = windows.subset(&idx);
    let pred = target.norm.denormalize_power(&model.predict(&probe)?);
    let mae = pred
        .iter()
        .zip(&probe.targets_raw)
        .map(|(p, y)| (p - y).abs())
        .sum::<f64>()
        / idx.len() as f64;
    Ok(decide(mae, cfg.mae_threshold))
}

/// Continues training a copy of `pretrained` on the target's training
/// windows at the reduced learning rate. The target's own penalty band is
/// used, and no target test data is touched.
pub fn fine_tune(
    pretrained: &IdsNetModel,
    target: &PreparedStation,
    cfg: &RunConfig,
) -> Result<FitOutcome> {
    if target.windows.train.is_empty() {
        return Err(Error::Data("target training split has no windows".into()));
    }
    let mut schedule = cfg.transfer.finetune_schedule(&cfg.train);
    schedule.seed = derive_seed(cfg.seed, stream::FINE_TUNE, 1);
    fit(pretrained, target.train_data(), None, &schedule)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub source: String,
    pub target: String,
    /// MMD² of every candidate to the target.
    pub mmd: Vec<(String, f64)>,
    pub decision: TransferDecision,
    /// A model trained on the target's few-shot data alone.
    pub direct: Option<MetricsReport>,
    /// The pretrained model applied without adaptation.
    pub transfer: MetricsReport,
    pub fine_tuned: Option<MetricsReport>,
}

impl TransferReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,mse,mae,rmse,r2\n");
        let rows = [
            ("direct", self.direct),
            ("transfer", Some(self.transfer)),
            ("fine_tuned", self.fine_tuned),
        ];
        for (name, m) in rows {
            if let Some(m) = m {
                let _ = writeln!(out, "{name},{},{},{},{}", m.mse, m.mae, m.rmse, m.r2);
            }
        }
        out
    }
}

/// Everything a transfer run produced.
#[derive(Clone, Debug)]
pub struct TransferRun {
    pub report: TransferReport,
    pub selection: SourceSelection,
    pub source: PreparedStation,
    pub target: PreparedStation,
    pub pretrained: FitOutcome,
    pub fine_tuned: Option<FitOutcome>,
    pub direct: Option<FitOutcome>,
}

/// Source selection, preprocessing, pretraining, probing, optional
/// fine-tuning, and evaluation on the target test split.
pub fn run_transfer(
    candidates: &[StationSeries],
    target: &StationSeries,
    cfg: &RunConfig,
) -> Result<TransferRun> {
    cfg.validate()?;
    let selection = select_source(candidates, target, &cfg.mmd).stage("select-source")?;
    log::info!("selected source `{}`", selection.selected);
    let source =
        prepare_source(&candidates[selection.selected_index], cfg).stage("preprocess source")?;
    let tgt = prepare_target(target, source.feature_names(), cfg).stage("preprocess target")?;
    let pretrained = pretrain(&source, cfg).stage("pretrain")?;
    transfer_prepared(selection, source, tgt, pretrained, cfg)
}

/// The stages of [`run_transfer`] after pretraining.
pub fn transfer_prepared(
    selection: SourceSelection,
    source: PreparedStation,
    target: PreparedStation,
    pretrained: FitOutcome,
    cfg: &RunConfig,
) -> Result<TransferRun> {
    let decision = probe_and_decide(&pretrained.model, &target, &cfg.transfer).stage("probe")?;
    log::info!(
        "probe MAE {:.4} vs threshold {}: {}",
        decision.probe_mae,
        decision.threshold,
        if decision.fine_tune {
            "fine-tuning"
        } else {
            "transferring as is"
        }
    );
    let fine_tuned = if decision.fine_tune || cfg.transfer.all_variants {
        Some(fine_tune(&pretrained.model, &target, cfg).stage("fine-tune")?)
    } else {
        None
    };
    let direct = if cfg.transfer.all_variants {
        Some(train_fresh(&target, cfg, stream::DIRECT).stage("direct training")?)
    } else {
        None
    };
    let score =
        |m: &IdsNetModel| evaluate_model(m, &target.windows.test, &target.norm).map(|r| r.0);
    let report = TransferReport {
        source: selection.selected.clone(),
        target: target.series.station_id.clone(),
        mmd: selection.table.clone(),
        decision,
        direct: direct
            .as_ref()
            .map(|d| score(&d.model))
            .transpose()
            .stage("evaluate")?,
        transfer: score(&pretrained.model).stage("evaluate")?,
        fine_tuned: fine_tuned
            .as_ref()
            .map(|f| score(&f.model))
            .transpose()
            .stage("evaluate")?,
    };
    Ok(TransferRun {
        report,
        selection,
        source,
        target,
        pretrained,
        fine_tuned,
        direct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_does_not_fine_tune() {
        assert!(!decide(0.2, 0.2).fine_tune);
        assert!(decide(0.2 + 1e-9, 0.2).fine_tune);
        assert!(!decide(0.15, 0.2).fine_tune);
    }

    #[test]
    fn schedule_scales_the_learning_rate() {
        let s = TransferConfig::default().finetune_schedule(&TrainConfig::default());
        assert!((s.lr - 1e-5).abs() < 1e-20);
        assert_eq!((s.max_epoch, s.batch_size), (50, 16));
    }
}
