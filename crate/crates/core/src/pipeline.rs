//! Station preparation and pretraining shared by the transfer, ablation and
//! sensitivity runs.

use crate::config::RunConfig;
use crate::data::{
    make_windows, NormalizerParams, SplitRanges, SplitSpec, SplitWindows, StationSeries,
};
use crate::error::{Error, Result};
use crate::model::{IdsNetModel, ModelSpec};
use crate::preprocess::{hampel_correct, preprocess_series, FeatureRanking};
use crate::train::{derive_seed, fit, FitOutcome, PenaltyBands, Weighted};

/// Seed streams of one run, so every stage draws independently of the others.
pub mod stream {
    pub const PRETRAIN: u64 = 1;
    pub const FINE_TUNE: u64 = 2;
    pub const DIRECT: u64 = 3;
}

/// A station after outlier correction and feature selection, with its
/// normaliser, windows and loss weights.
#[derive(Clone, Debug)]
pub struct PreparedStation {
    /// Raw-scale series restricted to the selected features.
    pub series: StationSeries,
    pub ranges: SplitRanges,
    pub norm: NormalizerParams,
    pub windows: SplitWindows,
    pub bands: PenaltyBands,
    pub train_weights: Vec<f64>,
    pub val_weights: Option<Vec<f64>>,
    /// Series indices replaced by the Hampel filter.
    pub outliers: Vec<usize>,
    /// Feature ranking over the original columns, when selection ran.
    pub ranking: Option<FeatureRanking>,
}

impl PreparedStation {
    pub fn train_data(&self) -> Weighted<'_> {
        Weighted {
            windows: &self.windows.train,
            weights: &self.train_weights,
        }
    }

    pub fn val_data(&self) -> Option<Weighted<'_>> {
        let windows = self.windows.val.as_ref()?;
        let weights = self.val_weights.as_deref()?;
        Some(Weighted { windows, weights })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.series.feature_names
    }
}

fn finish(
    series: StationSeries,
    split: &SplitSpec,
    outliers: Vec<usize>,
    ranking: Option<FeatureRanking>,
    cfg: &RunConfig,
) -> Result<PreparedStation> {
    let ranges = split.ranges(series.len())?;
    let norm = NormalizerParams::fit(&series, ranges.train.clone())?;
    let windows = make_windows(
        &series,
        split,
        cfg.train.look_back,
        &norm,
        cfg.data.eval_context,
    )?;
    let bands = PenaltyBands::fit(
        &series.timestamps,
        &series.power,
        ranges.train.clone(),
        cfg.loss.scope,
    )?;
    let train_weights = bands.weights(&windows.train, &series.timestamps, &cfg.loss);
    let val_weights = windows
        .val
        .as_ref()
        .map(|v| bands.weights(v, &series.timestamps, &cfg.loss));
    Ok(PreparedStation {
        series,
        ranges,
        norm,
        windows,
        bands,
        train_weights,
        val_weights,
        outliers,
        ranking,
    })
}

/// Corrects the large station's training power and, with feature
/// engineering on, keeps the top-ranked feature columns.
pub fn prepare_source(series: &StationSeries, cfg: &RunConfig) -> Result<PreparedStation> {
    let split = &cfg.data.large_split;
    let ranges = split.ranges(series.len())?;
    if cfg.model.feature_engineering {
        let pre = preprocess_series(series, ranges.train, &cfg.hampel, &cfg.relieff)?;
        let selected = pre.series.select_features(&pre.selected)?;
        finish(selected, split, pre.outliers, Some(pre.ranking), cfg)
    } else {
        let (corrected, outliers) = correct_train(series, &ranges, cfg)?;
        finish(corrected, split, outliers, None, cfg)
    }
}

/// Corrects the few-shot station's training power and keeps the feature
/// columns named in `features`, in that order.
pub fn prepare_target(
    series: &StationSeries,
    features: &[String],
    cfg: &RunConfig,
) -> Result<PreparedStation> {
    let split = &cfg.data.small_split;
    let ranges = split.ranges(series.len())?;
    let (corrected, outliers) = correct_train(series, &ranges, cfg)?;
    finish(
        select_named(&corrected, features)?,
        split,
        outliers,
        None,
        cfg,
    )
}

/// `series` restricted to the feature columns called `names`, in that order.
pub fn select_named(series: &StationSeries, names: &[String]) -> Result<StationSeries> {
    let columns = names
        .iter()
        .map(|name| {
            series
                .feature_names
                .iter()
                .position(|f| f == name)
                .ok_or_else(|| {
                    Error::Data(format!(
                        "station `{}` has no feature column `{name}`",
                        series.station_id
                    ))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    series.select_features(&columns)
}

/// Hampel-corrects the power inside the training range only.
pub fn correct_train(
    series: &StationSeries,
    ranges: &SplitRanges,
    cfg: &RunConfig,
) -> Result<(StationSeries, Vec<usize>)> {
    let train = ranges.train.clone();
    let fixed = hampel_correct(&series.power[train.clone()], &cfg.hampel)?;
    let mut out = series.clone();
    out.power[train.clone()].copy_from_slice(&fixed.corrected);
    let outliers = fixed.outliers.iter().map(|i| i + train.start).collect();
    Ok((out, outliers))
}

pub fn model_spec(cfg: &RunConfig, n_features: usize) -> ModelSpec {
    let mut spec = ModelSpec::new(
        cfg.pool.clone(),
        cfg.ensemble.clone(),
        cfg.train.look_back,
        n_features,
    );
    spec.head_hidden = cfg.model.head_hidden;
    spec.fusion = cfg.model.fusion;
    spec.weighted = cfg.model.weighted;
    spec
}

/// Trains a fresh model on `station`'s training windows, keeping the
/// best-validation parameters. `stream` separates the initial weights and
/// batch order of independent trainings within one run.
pub fn train_fresh(station: &PreparedStation, cfg: &RunConfig, stream: u64) -> Result<FitOutcome> {
    let spec = model_spec(cfg, station.series.n_features());
    let model = IdsNetModel::new(spec, derive_seed(cfg.seed, stream, 0))?;
    let mut train = cfg.train.clone();
    train.seed = derive_seed(cfg.seed, stream, 1);
    fit(&model, station.train_data(), station.val_data(), &train)
}

/// Pretraining on the large source station.
pub fn pretrain(source: &PreparedStation, cfg: &RunConfig) -> Result<FitOutcome> {
    train_fresh(source, cfg, stream::PRETRAIN)
}
