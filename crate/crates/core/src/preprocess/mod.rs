//! Source selection, outlier correction and feature ranking.

pub mod hampel;
pub mod mmd;
pub mod relieff;

pub use hampel::{hampel_correct, HampelConfig, HampelResult};
pub use mmd::{mmd_squared, select_source, MmdConfig, SourceSelection};
pub use relieff::{
    discretize_equal_frequency, relieff_rank, select_features, FeatureRanking, ReliefFConfig,
};

use std::ops::Range;

use crate::data::StationSeries;
use crate::error::Result;

/// Source series after preprocessing.
#[derive(Clone, Debug)]
pub struct Preprocessed {
    /// Full series with the training-split power corrected.
    pub series: StationSeries,
    /// Series indices replaced by the Hampel filter.
    pub outliers: Vec<usize>,
    pub ranking: FeatureRanking,
    pub selected: Vec<usize>,
}

/// Hampel-corrects power inside `train` only, then ranks the feature columns
/// against equal-frequency classes of the corrected training power.
pub fn preprocess_series(
    series: &StationSeries,
    train: Range<usize>,
    hampel: &HampelConfig,
    relief: &ReliefFConfig,
) -> Result<Preprocessed> {
    let fixed = hampel_correct(&series.power[train.clone()], hampel)?;
    let mut out = series.clone();
    out.power[train.clone()].copy_from_slice(&fixed.corrected);
    let outliers = fixed.outliers.iter().map(|i| i + train.start).collect();
    let classes = discretize_equal_frequency(&out.power[train.clone()], relief.n_bins);
    let ranking = relieff_rank(&out.features[train], &classes, relief)?;
    let selected = select_features(&ranking, relief.top_n.min(series.n_features()))?;
    Ok(Preprocessed {
        series: out,
        outliers,
        ranking,
        selected,
    })
}
