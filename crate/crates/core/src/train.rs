//! Peak-penalised loss, the training loop, and evaluation metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::time::Instant;

use chrono::{NaiveDate, NaiveDateTime};
use ndgrad::{AdamW, AdamWState, Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{NormalizerParams, WindowSet};
use crate::error::{Error, Result};
use crate::model::IdsNetModel;

/// Which targets the penalty band's mean and deviation are taken over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandScope {
    /// One band over every training target.
    #[default]
    Global,
    /// One band per calendar day of the training split.
    PerDay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of squared errors on targets outside the band. 1 gives plain MSE.
    pub penalty_multiplier: f64,
    /// Band half-width in standard deviations.
    pub z_threshold: f64,
    pub scope: BandScope,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            penalty_multiplier: 3.0,
            z_threshold: 2.0,
            scope: BandScope::Global,
        }
    }
}

impl LossConfig {
    /// Unweighted mean squared error.
    pub fn plain() -> Self {
        Self {
            penalty_multiplier: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_multiplier >= 1.0 && self.penalty_multiplier.is_finite()) {
            return Err(Error::Config(format!(
                "loss.penalty_multiplier must be at least 1, got {}",
                self.penalty_multiplier
            )));
        }
        if !(self.z_threshold > 0.0 && self.z_threshold.is_finite()) {
            return Err(Error::Config(format!(
                "loss.z_threshold must be positive, got {}",
                self.z_threshold
            )));
        }
        Ok(())
    }
}

/// Mean and population standard deviation of raw targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub mean: f64,
    pub std: f64,
}

impl BandStats {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data(
                "cannot fit band statistics on no targets".into(),
            ));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt(),
        })
    }

    /// Loss weight of raw target `y`. A zero deviation means an unbounded
    /// band, so nothing is penalised.
    pub fn multiplier(&self, y: f64, cfg: &LossConfig) -> f64 {
        if self.std > 0.0 && (y - self.mean).abs() > cfg.z_threshold * self.std {
            cfg.penalty_multiplier
        } else {
            1.0
        }
    }
}

fn warn_flat(stats: &BandStats, what: &str) {
    if stats.std == 0.0 {
        log::warn!("{what} targets are constant; the peak penalty is disabled");
    }
}

/// `mean_t m_t (y_t - yhat_t)^2`, where `m_t` is the penalty multiplier for
/// targets outside `mean ± z * std`.
pub fn penalized_mse(
    pred: &[f64],
    target: &[f64],
    cfg: &LossConfig,
    stats: &BandStats,
) -> Result<f64> {
    cfg.validate()?;
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Data(format!(
            "loss needs equal nonempty lengths, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    warn_flat(stats, "training");
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, y)| stats.multiplier(*y, cfg) * (y - p).powi(2))
        .sum();
    Ok(total / pred.len() as f64)
}

/// Band statistics frozen from a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyBands {
    pub global: BandStats,
    /// Only filled for [`BandScope::PerDay`].
    pub per_day: BTreeMap<NaiveDate, BandStats>,
}

impl PenaltyBands {
    /// Fits on the raw power of `train` within `timestamps`/`power`.
    pub fn fit(
        timestamps: &[NaiveDateTime],
        power: &[f64],
        train: Range<usize>,
        scope: BandScope,
    ) -> Result<Self> {
        let global = BandStats::fit(&power[train.clone()])?;
        warn_flat(&global, "training");
        let mut per_day = BTreeMap::new();
        if scope == BandScope::PerDay {
            let mut days: BTreeMap<NaiveDate, Vec<f64>> = BTreeMap::new();
            for t in train {
                days.entry(timestamps[t].date()).or_default().push(power[t]);
            }
            for (day, values) in days {
                per_day.insert(day, BandStats::fit(&values)?);
            }
        }
        Ok(Self { global, per_day })
    }

    /// Per-window loss weights. Targets on days without their own band use
    /// the global one.
    pub fn weights(
        &self,
        windows: &WindowSet,
        timestamps: &[NaiveDateTime],
        cfg: &LossConfig,
    ) -> Vec<f64> {
        windows
            .targets_raw
            .iter()
            .zip(&windows.target_index)
            .map(|(&y, &t)| {
                let stats = timestamps
                    .get(t)
                    .and_then(|ts| self.per_day.get(&ts.date()))
                    .unwrap_or(&self.global);
                stats.multiplier(y, cfg)
            })
            .collect()
    }
}

/// Windows paired with their per-window loss weights.
#[derive(Clone, Copy, Debug)]
pub struct Weighted<'a> {
    pub windows: &'a WindowSet,
    pub weights: &'a [f64],
}

impl<'a> Weighted<'a> {
    pub fn new(windows: &'a WindowSet, weights: &'a [f64]) -> Result<Self> {
        if windows.len() != weights.len() {
            return Err(Error::Data(format!(
                "{} windows but {} loss weights",
                windows.len(),
                weights.len()
            )));
        }
        Ok(Self { windows, weights })
    }
}

/// `mean(m * (pred - y)^2)` on the tape; `pred` and `y` are `[B, 1]`.
pub fn weighted_mse(g: &mut Graph<'_>, pred: Var, y: Var, weights: &[f64]) -> Result<Var> {
    let diff = g.sub(pred, y)?;
    let sq = g.mul(diff, diff)?;
    let m = g.input(Tensor::new(vec![weights.len(), 1], weights.to_vec())?);
    let weighted = g.mul(sq, m)?;
    Ok(g.reduce_mean(weighted))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epoch: usize,
    pub batch_size: usize,
    pub look_back: usize,
    /// Shuffle and dropout stream. Pipelines derive it from the run seed.
    #[serde(skip)]
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement. `None`
    /// always runs to `max_epoch`.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 0.01,
            max_epoch: 300,
            batch_size: 128,
            look_back: 96,
            seed: 0,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "train.lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "train.weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 || self.look_back == 0 {
            return Err(Error::Config(
                "train.batch_size and train.look_back must be at least 1".into(),
            ));
        }
        if self.patience == Some(0) {
            return Err(Error::Config(
                "train.patience must be at least 1 when set".into(),
            ));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamW::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub wall_secs: f64,
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for e in history {
        let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{val}", e.epoch, e.train_loss);
    }
    out
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Best-validation parameters, or the last epoch's without validation.
    pub model: IdsNetModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
}

/// Decorrelated stream index for `(seed, a, b)`.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z =
        seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Weighted loss of `model` over `data` with dropout off and hard gates.
pub fn evaluate_loss(model: &IdsNetModel, data: Weighted<'_>) -> Result<f64> {
    let pred = model.predict(data.windows)?;
    let y = data.windows.targets.data();
    let total: f64 = pred
        .iter()
        .zip(y)
        .zip(data.weights)
        .map(|((p, y), m)| m * (p - y).powi(2))
        .sum();
    Ok(total / pred.len() as f64)
}

/// AdamW over seeded, shuffled mini-batches. After every epoch the
/// validation loss is measured and the best parameters so far are kept.
pub fn fit(
    model: &IdsNetModel,
    train: Weighted<'_>,
    val: Option<Weighted<'_>>,
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.windows.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    let val = val.filter(|v| !v.windows.is_empty());
    let opt = cfg.optimizer();
    let mut state = AdamWState::new();
    let mut current = model.clone();
    let mut best: Option<(f64, usize, IdsNetModel)> = None;
    let mut history = Vec::with_capacity(cfg.max_epoch);
    let mut order: Vec<usize> = (0..train.windows.len()).collect();
    for epoch in 0..cfg.max_epoch {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64, u64::MAX));
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (pv, feat, y) = train.windows.gather(idx);
            let w: Vec<f64> = idx.iter().map(|&i| train.weights[i]).collect();
            let grads = {
                let mut g = current.graph().training(true).seed(derive_seed(
                    cfg.seed,
                    epoch as u64,
                    batch as u64,
                ));
                let pv = g.input(pv);
                let feat = g.input(feat);
                let y = g.input(y);
                let out = current.forward(&mut g, pv, feat)?;
                let loss = weighted_mse(&mut g, out.prediction, y, &w)?;
                let value = g.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch });
                }
                sum += value * idx.len() as f64;
                g.backward(loss)?;
                g.param_grads()
            };
            opt.step(&mut current.params, &grads, &mut state)
                .map_err(|e| match e {
                    ndgrad::Error::NonFiniteGradient(_) => Error::NonFiniteLoss { epoch, batch },
                    other => other.into(),
                })?;
        }
        let train_loss = sum / train.windows.len() as f64;
        let val_loss = val.map(|v| evaluate_loss(&current, v)).transpose()?;
        if let Some(v) = val_loss {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "validation loss is {v} after epoch {epoch}"
                )));
            }
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, current.clone()));
            }
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            wall_secs: started.elapsed().as_secs_f64(),
        });
        log::info!(
            "epoch {epoch}: train {train_loss:.6}{}",
            val_loss
                .map(|v| format!(", val {v:.6}"))
                .unwrap_or_default()
        );
        if let (Some(p), Some((_, at, _))) = (cfg.patience, &best) {
            if epoch - at >= p {
                log::info!("no validation improvement for {p} epochs; stopping");
                break;
            }
        }
    }
    Ok(match best {
        Some((_, epoch, model)) => FitOutcome {
            model,
            history,
            best_epoch: Some(epoch),
        },
        None => FitOutcome {
            model: current,
            history,
            best_epoch: None,
        },
    })
}

/// Raw-scale error metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
}

pub fn evaluate_metrics(pred: &[f64], target: &[f64]) -> Result<MetricsReport> {
    if pred.len() != target.len() || target.len() < 2 {
        return Err(Error::Data(format!(
            "metrics need equal lengths of at least 2, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let n = target.len() as f64;
    let mean = target.iter().sum::<f64>() / n;
    let ss_tot: f64 = target.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Data(
            "R² is undefined for a constant target series".into(),
        ));
    }
    let ss_res: f64 = pred.iter().zip(target).map(|(p, y)| (y - p).powi(2)).sum();
    let mae = pred
        .iter()
        .zip(target)
        .map(|(p, y)| (y - p).abs())
        .sum::<f64>()
        / n;
    let mse = ss_res / n;
    Ok(MetricsReport {
        mse,
        mae,
        rmse: mse.sqrt(),
        r2: 1.0 - ss_res / ss_tot,
    })
}

/// Raw-scale predictions and metrics of `model` on `windows`.
pub fn evaluate_model(
    model: &IdsNetModel,
    windows: &WindowSet,
    norm: &NormalizerParams,
) -> Result<(MetricsReport, Vec<f64>)> {
    let pred = norm.denormalize_power(&model.predict(windows)?);
    let metrics = evaluate_metrics(&pred, &windows.targets_raw)?;
    Ok((metrics, pred))
}

/// Population standard deviation of a metric across a one-factor sweep.
pub fn sensitivity_std(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Data(format!(
            "sensitivity needs at least 2 values, got {}",
            values.len()
        )));
    }
    Ok(BandStats::fit(values)?.std)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(0, 0, 0), derive_seed(0, 0, 1));
        assert_ne!(derive_seed(0, 1, 0), derive_seed(0, 0, 1));
        assert_eq!(derive_seed(3, 4, 5), derive_seed(3, 4, 5));
    }

    #[test]
    fn history_csv_leaves_missing_validation_blank() {
        let h = [EpochStats {
            epoch: 0,
            train_loss: 0.5,
            val_loss: None,
            wall_secs: 1.0,
        }];
        assert_eq!(history_csv(&h), "epoch,train_loss,val_loss\n0,0.5,\n");
    }

    #[test]
    fn zero_std_never_penalises() {
        let s = BandStats {
            mean: 1.0,
            std: 0.0,
        };
        assert_eq!(s.multiplier(100.0, &LossConfig::default()), 1.0);
    }
}
