//! Ablation and single-factor sensitivity studies built on the transfer
//! pipeline.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{EvalContext, StationSeries};
use crate::error::{Result, StageExt};
use crate::pipeline::{prepare_source, prepare_target, pretrain};
use crate::preprocess::select_source;
use crate::train::{evaluate_model, sensitivity_std, MetricsReport};
use crate::transfer::fine_tune;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    NoFeatureEngineering,
    NoFusion,
    NoWeighted,
    NoCustomLoss,
    Full,
}

impl Ablation {
    /// Table order: the four ablations, then the full model.
    pub const ALL: [Ablation; 5] = [
        Ablation::NoFeatureEngineering,
        Ablation::NoFusion,
        Ablation::NoWeighted,
        Ablation::NoCustomLoss,
        Ablation::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::NoFeatureEngineering => "w/o Feature Engineering",
            Ablation::NoFusion => "w/o Feature Fusion",
            Ablation::NoWeighted => "w/o Model Weighted Prediction",
            Ablation::NoCustomLoss => "w/o Customized Loss Function",
            Ablation::Full => "IDS-Net",
        }
    }

    /// `cfg` with this variant's block disabled.
    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        match self {
            Ablation::NoFeatureEngineering => c.model.feature_engineering = false,
            Ablation::NoFusion => c.model.fusion = false,
            Ablation::NoWeighted => c.model.weighted = false,
            Ablation::NoCustomLoss => c.loss.penalty_multiplier = 1.0,
            Ablation::Full => {}
        }
        c
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Ablation,
    /// Pretrained model on the source station's test split.
    pub large: MetricsReport,
    /// Fine-tuned model on the target station's test split.
    pub small: MetricsReport,
    pub best_val_loss: Option<f64>,
}

/// Every ablation variant through pretraining and fine-tuning, sharing the
/// source selection, seed and data pipeline.
pub fn run_ablation(
    candidates: &[StationSeries],
    target: &StationSeries,
    cfg: &RunConfig,
) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let selection = select_source(candidates, target, &cfg.mmd).stage("select-source")?;
    let source_series = &candidates[selection.selected_index];
    Ablation::ALL
        .iter()
        .map(|&variant| {
            log::info!("ablation: {variant}");
            let c = variant.apply(cfg);
            let source = prepare_source(source_series, &c).stage("preprocess source")?;
            let tgt =
                prepare_target(target, source.feature_names(), &c).stage("preprocess target")?;
            let pre = pretrain(&source, &c).stage("pretrain")?;
            let large = evaluate_model(&pre.model, &source.windows.test, &source.norm)
                .stage("evaluate")?
                .0;
            let tuned = fine_tune(&pre.model, &tgt, &c).stage("fine-tune")?;
            let small = evaluate_model(&tuned.model, &tgt.windows.test, &tgt.norm)
                .stage("evaluate")?
                .0;
            let best_val_loss = pre
                .history
                .iter()
                .filter_map(|e| e.val_loss)
                .min_by(f64::total_cmp);
            Ok(AblationRow {
                variant,
                large,
                small,
                best_val_loss,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "variant,large_mse,large_mae,large_rmse,large_r2,small_mse,small_mae,small_rmse,small_r2,best_val_loss\n",
    );
    for r in rows {
        let (l, s) = (r.large, r.small);
        let val = r.best_val_loss.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{val}",
            r.variant, l.mse, l.mae, l.rmse, l.r2, s.mse, s.mae, s.rmse, s.r2
        );
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Factor {
    #[serde(rename = "ME")]
    MaxEpoch,
    #[serde(rename = "LW")]
    LookBack,
    #[serde(rename = "BS")]
    BatchSize,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::MaxEpoch, Factor::LookBack, Factor::BatchSize];

    pub fn label(self) -> &'static str {
        match self {
            Factor::MaxEpoch => "ME",
            Factor::LookBack => "LW",
            Factor::BatchSize => "BS",
        }
    }

    fn apply(self, cfg: &mut RunConfig, value: usize) {
        match self {
            Factor::MaxEpoch => cfg.train.max_epoch = value,
            Factor::LookBack => cfg.train.look_back = value,
            Factor::BatchSize => cfg.train.batch_size = value,
        }
    }

    fn current(self, cfg: &RunConfig) -> usize {
        match self {
            Factor::MaxEpoch => cfg.train.max_epoch,
            Factor::LookBack => cfg.train.look_back,
            Factor::BatchSize => cfg.train.batch_size,
        }
    }
}

/// Values swept for each factor; the others stay at the run config's values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityConfig {
    pub max_epoch: Vec<usize>,
    pub look_back: Vec<usize>,
    pub batch_size: Vec<usize>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            max_epoch: vec![100, 200, 300, 500],
            look_back: vec![32, 64, 96, 128],
            batch_size: vec![32, 64, 128, 256],
        }
    }
}

impl SensitivityConfig {
    pub fn values(&self, factor: Factor) -> &[usize] {
        match factor {
            Factor::MaxEpoch => &self.max_epoch,
            Factor::LookBack => &self.look_back,
            Factor::BatchSize => &self.batch_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRun {
    pub factor: Factor,
    pub value: usize,
    /// Fine-tuned model on the target station's test split.
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub runs: Vec<SensitivityRun>,
    /// Population STD of (RMSE, MAE, R²) across each factor's sweep.
    pub std: BTreeMap<Factor, [f64; 3]>,
}

impl SensitivityReport {
    /// Metrics as rows, factors as columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for f in self.std.keys() {
            let _ = write!(out, ",{}", f.label());
        }
        out.push('\n');
        for (i, metric) in ["RMSE", "MAE", "R2"].iter().enumerate() {
            out.push_str(metric);
            for s in self.std.values() {
                let _ = write!(out, ",{}", s[i]);
            }
            out.push('\n');
        }
        out
    }

    pub fn runs_csv(&self) -> String {
        let mut out = String::from("factor,value,mse,mae,rmse,r2\n");
        for r in &self.runs {
            let m = r.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.factor.label(),
                r.value,
                m.mse,
                m.mae,
                m.rmse,
                m.r2
            );
        }
        out
    }
}

/// Varies one of max epoch, look-back and batch size at a time, pretraining
/// and fine-tuning for each value, and reports the spread of the few-shot
/// test metrics. Evaluation windows take their look-back context from the
/// preceding split so that look-backs longer than the test split still work.
pub fn run_sensitivity(
    candidates: &[StationSeries],
    target: &StationSeries,
    cfg: &RunConfig,
) -> Result<SensitivityReport> {
    cfg.validate()?;
    let sweep = &cfg.sensitivity;
    let selection = select_source(candidates, target, &cfg.mmd).stage("select-source")?;
    let source_series = &candidates[selection.selected_index];
    let mut cache: BTreeMap<(usize, usize, usize), MetricsReport> = BTreeMap::new();
    let mut runs = Vec::new();
    let mut std = BTreeMap::new();
    for factor in Factor::ALL {
        let values = sweep.values(factor);
        if values.is_empty() {
            continue;
        }
        let mut metrics = Vec::with_capacity(values.len());
        for &value in values {
            let mut c = cfg.clone();
            c.data.eval_context = EvalContext::History;
            factor.apply(&mut c, value);
            c.validate()?;
            let key = (c.train.max_epoch, c.train.look_back, c.train.batch_size);
            let m = match cache.get(&key) {
                Some(m) => *m,
                None => {
                    log::info!(
                        "sensitivity: {}={value} (base {})",
                        factor.label(),
                        factor.current(cfg)
                    );
                    let source = prepare_source(source_series, &c).stage("preprocess source")?;
                    let tgt = prepare_target(target, source.feature_names(), &c)
                        .stage("preprocess target")?;
                    let pre = pretrain(&source, &c).stage("pretrain")?;
                    let tuned = fine_tune(&pre.model, &tgt, &c).stage("fine-tune")?;
                    let m = evaluate_model(&tuned.model, &tgt.windows.test, &tgt.norm)
                        .stage("evaluate")?
                        .0;
                    cache.insert(key, m);
                    m
                }
            };
            runs.push(SensitivityRun {
                factor,
                value,
                metrics: m,
            });
            metrics.push(m);
        }
        if metrics.len() >= 2 {
            let pick = |f: fn(&MetricsReport) -> f64| {
                sensitivity_std(&metrics.iter().map(f).collect::<Vec<_>>())
            };
            std.insert(
                factor,
                [pick(|m| m.rmse)?, pick(|m| m.mae)?, pick(|m| m.r2)?],
            );
        }
    }
    Ok(SensitivityReport { runs, std })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn each_ablation_disables_one_block() {
        let base = RunConfig::default();
        let changed = |c: &RunConfig| {
            [
                c.model.feature_engineering != base.model.feature_engineering,
                c.model.fusion != base.model.fusion,
                c.model.weighted != base.model.weighted,
                c.loss != base.loss,
            ]
            .iter()
            .filter(|&&b| b)
            .count()
        };
        for a in Ablation::ALL {
            let expected = usize::from(a != Ablation::Full);
            assert_eq!(changed(&a.apply(&base)), expected, "{a}");
        }
    }

    #[test]
    fn sensitivity_table_layout() {
        let m = MetricsReport {
            mse: 1.0,
            mae: 1.0,
            rmse: 1.0,
            r2: 0.5,
        };
        let report = SensitivityReport {
            runs: vec![SensitivityRun {
                factor: Factor::LookBack,
                value: 32,
                metrics: m,
            }],
            std: [
                (Factor::MaxEpoch, [0.1, 0.2, 0.3]),
                (Factor::BatchSize, [0.4, 0.5, 0.6]),
            ]
            .into_iter()
            .collect(),
        };
        assert_eq!(
            report.to_csv(),
            "metric,ME,BS\nRMSE,0.1,0.4\nMAE,0.2,0.5\nR2,0.3,0.6\n"
        );
        assert_eq!(
            report.runs_csv(),
            "factor,value,mse,mae,rmse,r2\nLW,32,1,1,1,0.5\n"
        );
    }
}
