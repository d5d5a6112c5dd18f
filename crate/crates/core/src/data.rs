//! Station series, CSV I/O, min-max scaling, splits and supervised windows.

use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeDelta, Timelike};
use ndgrad::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples per day at the 15-minute cadence.
pub const POINTS_PER_DAY: usize = 96;
pub const CADENCE_MINUTES: i64 = 15;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// One station: power (kW) plus `N` auxiliary feature columns on a regular
/// 15-minute grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StationSeries {
    pub station_id: String,
    pub timestamps: Vec<NaiveDateTime>,
    pub power: Vec<f64>,
    /// `T` rows of `N` values.
    pub features: Vec<Vec<f64>>,
    pub feature_names: Vec<String>,
}

impl StationSeries {
    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Values of feature column `j`.
    pub fn feature_column(&self, j: usize) -> Vec<f64> {
        self.features.iter().map(|row| row[j]).collect()
    }

    /// Copy restricted to the given feature columns, in the given order.
    pub fn select_features(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.n_features()) {
            return Err(Error::Data(format!(
                "feature index {bad} out of range for {} features",
                self.n_features()
            )));
        }
        Ok(Self {
            station_id: self.station_id.clone(),
            timestamps: self.timestamps.clone(),
            power: self.power.clone(),
            features: self
                .features
                .iter()
                .map(|row| columns.iter().map(|&c| row[c]).collect())
                .collect(),
            feature_names: columns
                .iter()
                .map(|&c| self.feature_names[c].clone())
                .collect(),
        })
    }

    /// Copy covering `range` of the time axis.
    pub fn slice(&self, range: Range<usize>) -> Self {
        Self {
            station_id: self.station_id.clone(),
            timestamps: self.timestamps[range.clone()].to_vec(),
            power: self.power[range.clone()].to_vec(),
            features: self.features[range].to_vec(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Checks the series invariants: regular spacing, non-negative finite
    /// power, rectangular finite features.
    pub fn validate(&self) -> Result<()> {
        let t = self.power.len();
        if self.timestamps.len() != t || self.features.len() != t {
            return Err(Error::Data(format!(
                "{}: column lengths differ (timestamps {}, power {t}, features {})",
                self.station_id,
                self.timestamps.len(),
                self.features.len()
            )));
        }
        for (i, pair) in self.timestamps.windows(2).enumerate() {
            let minutes = (pair[1] - pair[0]).num_minutes();
            if pair[1] - pair[0] != TimeDelta::minutes(CADENCE_MINUTES) {
                return Err(Error::IrregularSpacing {
                    row: i + 2,
                    minutes,
                    expected: CADENCE_MINUTES,
                });
            }
        }
        for (i, &p) in self.power.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::Data(format!("row {}: non-finite power", i + 1)));
            }
            if p < 0.0 {
                return Err(Error::NegativePower {
                    row: i + 1,
                    value: p,
                });
            }
        }
        let n = self.n_features();
        for (i, row) in self.features.iter().enumerate() {
            if row.len() != n || row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("row {}: malformed feature row", i + 1)));
            }
        }
        Ok(())
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .or_else(|_| s.parse::<NaiveDateTime>())
        .ok()
        .or_else(|| DateTime::parse_from_rfc3339(s).ok().map(|d| d.naive_utc()))
}

/// Reads `timestamp,power,<feature...>`. Rows are numbered from 1 for the
/// first data row (the header is row 0). The station id is the file stem.
pub fn load_csv(path: impl AsRef<Path>) -> Result<StationSeries> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "station".into());
    parse_csv(&id, &text).map_err(|e| match e {
        Error::Data(msg) => Error::Csv {
            path: path.display().to_string(),
            msg,
        },
        other => other,
    })
}

pub fn parse_csv(station_id: &str, text: &str) -> Result<StationSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Data(format!("header: {e}")))?
        .clone();
    if header.len() < 2
        || !header[0].eq_ignore_ascii_case("timestamp")
        || !header[1].eq_ignore_ascii_case("power")
    {
        return Err(Error::Data(
            "header must start with `timestamp,power`".into(),
        ));
    }
    let feature_names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut series = StationSeries {
        station_id: station_id.to_string(),
        timestamps: Vec::new(),
        power: Vec::new(),
        features: Vec::new(),
        feature_names,
    };
    let mut bad_rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let Ok(record) = record else {
            bad_rows.push(row);
            continue;
        };
        if record.len() != header.len() {
            bad_rows.push(row);
            continue;
        }
        let ts = parse_timestamp(&record[0]);
        let values: Option<Vec<f64>> = record
            .iter()
            .skip(1)
            .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        match (ts, values) {
            (Some(ts), Some(values)) => {
                series.timestamps.push(ts);
                series.power.push(values[0]);
                series.features.push(values[1..].to_vec());
            }
            _ => bad_rows.push(row),
        }
    }
    if !bad_rows.is_empty() {
        let shown: Vec<String> = bad_rows.iter().take(20).map(ToString::to_string).collect();
        return Err(Error::Data(format!(
            "unparseable rows: {}{}",
            shown.join(", "),
            if bad_rows.len() > 20 { ", ..." } else { "" }
        )));
    }
    if series.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    series.validate()?;
    Ok(series)
}

pub fn to_csv(series: &StationSeries) -> String {
    let mut out = String::from("timestamp,power");
    for name in &series.feature_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..series.len() {
        out.push_str(&series.timestamps[i].format(TIMESTAMP_FORMAT).to_string());
        out.push(',');
        out.push_str(&series.power[i].to_string());
        for v in &series.features[i] {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

/// Min and max of one channel on the fitting split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl ChannelRange {
    pub fn scale(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn unscale(&self, v: f64) -> f64 {
        v * (self.max - self.min) + self.min
    }
}

/// Per-channel min-max parameters; channel 0 is power, then the features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizerParams {
    pub power: ChannelRange,
    pub features: Vec<ChannelRange>,
}

impl NormalizerParams {
    /// Fits on `range` of `series` only.
    pub fn fit(series: &StationSeries, range: Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > series.len() {
            return Err(Error::Data(format!(
                "cannot fit normaliser on rows {range:?} of {}",
                series.len()
            )));
        }
        let fit = |name: &str, values: &mut dyn Iterator<Item = f64>| -> Result<ChannelRange> {
            let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
            if !(max > min) {
                return Err(Error::DegenerateChannel(name.to_string()));
            }
            Ok(ChannelRange {
                name: name.to_string(),
                min,
                max,
            })
        };
        let power = fit("power", &mut series.power[range.clone()].iter().copied())?;
        let features = (0..series.n_features())
            .map(|j| {
                fit(
                    &series.feature_names[j],
                    &mut series.features[range.clone()].iter().map(|r| r[j]),
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { power, features })
    }

    /// Scaled copy of the series. Values outside the fitted range map
    /// outside `[0, 1]`; nothing is clipped.
    pub fn normalize(&self, series: &StationSeries) -> Result<StationSeries> {
        if series.n_features() != self.features.len() {
            return Err(Error::Data(format!(
                "normaliser has {} feature channels, series has {}",
                self.features.len(),
                series.n_features()
            )));
        }
        let mut out = series.clone();
        out.power.iter_mut().for_each(|p| *p = self.power.scale(*p));
        for row in &mut out.features {
            for (v, ch) in row.iter_mut().zip(&self.features) {
                *v = ch.scale(*v);
            }
        }
        Ok(out)
    }

    pub fn denormalize_power(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.power.unscale(v)).collect()
    }

    /// Restricts the feature channels to `columns`, in that order.
    pub fn select_features(&self, columns: &[usize]) -> Self {
        Self {
            power: self.power.clone(),
            features: columns.iter().map(|&c| self.features[c].clone()).collect(),
        }
    }
}

/// Split geometry in raw points. The segments are laid out train, then
/// validation, then test, ending at the last point of the series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_len: usize,
    pub val_len: usize,
    pub test_len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitSpec {
    /// Large-station geometry: 8528 / 300 / 100.
    pub const LARGE: SplitSpec = SplitSpec {
        train_len: 8528,
        val_len: 300,
        test_len: 100,
    };
    /// Few-shot geometry: 284 / none / 100.
    pub const SMALL: SplitSpec = SplitSpec {
        train_len: 284,
        val_len: 0,
        test_len: 100,
    };

    pub fn total(&self) -> usize {
        self.train_len + self.val_len + self.test_len
    }

    pub fn ranges(&self, series_len: usize) -> Result<SplitRanges> {
        if self.total() > series_len {
            return Err(Error::Data(format!(
                "split {}+{}+{} exceeds series length {series_len}",
                self.train_len, self.val_len, self.test_len
            )));
        }
        if self.train_len == 0 {
            return Err(Error::Data("training split is empty".into()));
        }
        let start = series_len - self.total();
        let train = start..start + self.train_len;
        let val = train.end..train.end + self.val_len;
        let test = val.end..val.end + self.test_len;
        Ok(SplitRanges { train, val, test })
    }
}

/// Supervised windows of a single segment with one-step-ahead targets.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    /// `[count, LW, 1]`, normalised.
    pub inputs_pv: Tensor,
    /// `[count, LW, N]`, normalised.
    pub inputs_feat: Tensor,
    /// `[count, 1]`, normalised.
    pub targets: Tensor,
    /// Targets in kW.
    pub targets_raw: Vec<f64>,
    /// Series index of each target.
    pub target_index: Vec<usize>,
    pub look_back: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.targets_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets_raw.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.inputs_feat.shape()[2]
    }

    /// The windows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> WindowSet {
        let (inputs_pv, inputs_feat, targets) = self.gather(idx);
        WindowSet {
            inputs_pv,
            inputs_feat,
            targets,
            targets_raw: idx.iter().map(|&i| self.targets_raw[i]).collect(),
            target_index: idx.iter().map(|&i| self.target_index[i]).collect(),
            look_back: self.look_back,
        }
    }

    /// Rows `idx` gathered into new tensors: `(pv, feat, targets)`.
    pub fn gather(&self, idx: &[usize]) -> (Tensor, Tensor, Tensor) {
        let lw = self.look_back;
        let n = self.n_features();
        let b = idx.len();
        let mut pv = Vec::with_capacity(b * lw);
        let mut feat = Vec::with_capacity(b * lw * n);
        let mut y = Vec::with_capacity(b);
        for &i in idx {
            pv.extend_from_slice(&self.inputs_pv.data()[i * lw..(i + 1) * lw]);
            feat.extend_from_slice(&self.inputs_feat.data()[i * lw * n..(i + 1) * lw * n]);
            y.push(self.targets.data()[i]);
        }
        (
            Tensor::new(vec![b, lw, 1], pv).expect("pv shape"),
            Tensor::new(vec![b, lw, n], feat).expect("feature shape"),
            Tensor::new(vec![b, 1], y).expect("target shape"),
        )
    }
}

/// Windows over `range` of `series` (raw kW): window `i` covers
/// `range.start + i .. range.start + i + LW` and predicts the next point, so
/// `count = range.len() - LW` and no window reaches outside `range`.
pub fn windows_in_segment(
    series: &StationSeries,
    range: Range<usize>,
    look_back: usize,
    norm: &NormalizerParams,
) -> Result<WindowSet> {
    if range.len() <= look_back {
        return Err(Error::SegmentTooShort {
            len: range.len(),
            look_back,
        });
    }
    build_windows(series, range.start + look_back..range.end, look_back, norm)
}

/// Windows whose targets cover all of `targets`, drawing look-back context
/// from the points just before it. Inputs may precede `targets.start`, which
/// must be at least `LW`.
pub fn windows_with_history(
    series: &StationSeries,
    targets: Range<usize>,
    look_back: usize,
    norm: &NormalizerParams,
) -> Result<WindowSet> {
    if targets.start < look_back || targets.is_empty() {
        return Err(Error::SegmentTooShort {
            len: targets.start,
            look_back,
        });
    }
    build_windows(series, targets, look_back, norm)
}

fn build_windows(
    series: &StationSeries,
    targets: Range<usize>,
    look_back: usize,
    norm: &NormalizerParams,
) -> Result<WindowSet> {
    if look_back == 0 {
        return Err(Error::Config("look-back window must be at least 1".into()));
    }
    if targets.end > series.len() {
        return Err(Error::Data(format!(
            "target range {targets:?} exceeds series length {}",
            series.len()
        )));
    }
    let scaled = norm.normalize(series)?;
    let n = series.n_features();
    let count = targets.len();
    let mut pv = Vec::with_capacity(count * look_back);
    let mut feat = Vec::with_capacity(count * look_back * n);
    let mut y = Vec::with_capacity(count);
    let mut y_raw = Vec::with_capacity(count);
    let mut index = Vec::with_capacity(count);
    for t in targets {
        for s in t - look_back..t {
            pv.push(scaled.power[s]);
            feat.extend_from_slice(&scaled.features[s]);
        }
        y.push(scaled.power[t]);
        y_raw.push(series.power[t]);
        index.push(t);
    }
    Ok(WindowSet {
        inputs_pv: Tensor::new(vec![count, look_back, 1], pv)?,
        inputs_feat: Tensor::new(vec![count, look_back, n], feat)?,
        targets: Tensor::new(vec![count, 1], y)?,
        targets_raw: y_raw,
        target_index: index,
        look_back,
    })
}

/// Windows for each split segment. `val` is `None` when the split has no
/// validation points.
#[derive(Clone, Debug)]
pub struct SplitWindows {
    pub train: WindowSet,
    pub val: Option<WindowSet>,
    pub test: WindowSet,
}

/// How the test (and validation) segments obtain look-back context.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalContext {
    /// Windows stay inside their own segment.
    #[default]
    Segment,
    /// Every point of the segment is a target; context may come from the
    /// preceding segment.
    History,
}

pub fn make_windows(
    series: &StationSeries,
    split: &SplitSpec,
    look_back: usize,
    norm: &NormalizerParams,
    eval_context: EvalContext,
) -> Result<SplitWindows> {
    let r = split.ranges(series.len())?;
    let eval = |range: Range<usize>| match eval_context {
        EvalContext::Segment => windows_in_segment(series, range, look_back, norm),
        EvalContext::History => windows_with_history(series, range, look_back, norm),
    };
    let train = windows_in_segment(series, r.train.clone(), look_back, norm)?;
    let val = if r.val.is_empty() {
        None
    } else {
        Some(eval(r.val.clone())?)
    };
    let test = eval(r.test.clone())?;
    Ok(SplitWindows { train, val, test })
}

/// Complete days of `values`, starting at the first midnight in `timestamps`.
pub fn daily_profiles(timestamps: &[NaiveDateTime], values: &[f64]) -> Vec<Vec<f64>> {
    let Some(first) = timestamps
        .iter()
        .position(|t| t.hour() == 0 && t.minute() == 0)
    else {
        return Vec::new();
    };
    values[first..]
        .chunks_exact(POINTS_PER_DAY)
        .map(<[f64]>::to_vec)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(power: &[f64]) -> StationSeries {
        let start = NaiveDateTime::parse_from_str("2018-06-30T00:00:00", TIMESTAMP_FORMAT).unwrap();
        StationSeries {
            station_id: "t".into(),
            timestamps: (0..power.len())
                .map(|i| start + TimeDelta::minutes(15 * i as i64))
                .collect(),
            power: power.to_vec(),
            features: power.iter().map(|p| vec![p * 2.0 + 1.0]).collect(),
            feature_names: vec!["f".into()],
        }
    }

    #[test]
    fn parses_three_rows() {
        let text = "timestamp,power,ghi,temp\n\
                    2018-06-30T00:00:00,0,0,20.5\n\
                    2018-06-30T00:15:00,1.5,100,21\n\
                    2018-06-30T00:30:00,2,150,21.5\n";
        let s = parse_csv("x", text).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.n_features(), 2);
        assert_eq!(s.features[1], vec![100.0, 21.0]);
    }

    #[test]
    fn reports_gap_row() {
        let text = "timestamp,power\n\
                    2018-06-30T00:00:00,0\n\
                    2018-06-30T00:15:00,1\n\
                    2018-06-30T00:45:00,2\n";
        match parse_csv("x", text).unwrap_err() {
            Error::IrregularSpacing { row, minutes, .. } => {
                assert_eq!(row, 3);
                assert_eq!(minutes, 30);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_negative_power() {
        let text = "timestamp,power\n2018-06-30T00:00:00,-1\n";
        assert!(matches!(
            parse_csv("x", text).unwrap_err(),
            Error::NegativePower { row: 1, .. }
        ));
    }

    #[test]
    fn lists_unparseable_rows() {
        let text = "timestamp,power\n\
                    2018-06-30T00:00:00,0\n\
                    2018-06-30T00:15:00,abc\n\
                    not-a-time,1\n";
        let msg = parse_csv("x", text).unwrap_err().to_string();
        assert!(msg.contains("2, 3"), "{msg}");
    }

    #[test]
    fn csv_roundtrip() {
        let s = tiny(&[0.0, 1.25, 3.5]);
        let back = parse_csv("t", &to_csv(&s)).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn min_max_scaling() {
        let s = tiny(&[0.0, 5.0, 10.0]);
        let norm = NormalizerParams::fit(&s, 0..3).unwrap();
        let n = norm.normalize(&s).unwrap();
        assert_eq!(n.power, vec![0.0, 0.5, 1.0]);
        let back = norm.denormalize_power(&n.power);
        for (a, b) in back.iter().zip(&s.power) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn values_beyond_fit_range_are_not_clipped() {
        let s = tiny(&[0.0, 10.0, 20.0]);
        let norm = NormalizerParams::fit(&s, 0..2).unwrap();
        let n = norm.normalize(&s).unwrap();
        assert_eq!(n.power[2], 2.0);
    }

    #[test]
    fn degenerate_channel_is_named() {
        let mut s = tiny(&[1.0, 2.0, 3.0]);
        s.feature_names = vec!["flat".into()];
        s.features = vec![vec![4.0]; 3];
        assert!(matches!(
            NormalizerParams::fit(&s, 0..3).unwrap_err(),
            Error::DegenerateChannel(name) if name == "flat"
        ));
    }

    #[test]
    fn window_counts_and_alignment() {
        let power: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let s = tiny(&power);
        let norm = NormalizerParams::fit(&s, 0..200).unwrap();
        let w = windows_in_segment(&s, 0..97, 96, &norm).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w.target_index, vec![96]);
        let w = windows_in_segment(&s, 10..50, 8, &norm).unwrap();
        assert_eq!(w.len(), 32);
        for i in 0..w.len() {
            // last input of window i is raw index 10 + i + 7
            let last_in = w.inputs_pv.data()[i * 8 + 7];
            assert_eq!(norm.power.unscale(last_in).round() as usize, 10 + i + 7);
            assert_eq!(w.target_index[i], 10 + i + 8);
            assert_eq!(w.targets_raw[i], (10 + i + 8) as f64);
        }
        assert!(matches!(
            windows_in_segment(&s, 0..96, 96, &norm),
            Err(Error::SegmentTooShort { .. })
        ));
    }

    #[test]
    fn large_segment_count() {
        let power: Vec<f64> = (0..8928).map(|i| (i % 7) as f64).collect();
        let s = tiny(&power);
        let norm = NormalizerParams::fit(&s, 0..8928).unwrap();
        assert_eq!(
            windows_in_segment(&s, 0..8928, 96, &norm).unwrap().len(),
            8832
        );
    }

    #[test]
    fn split_ranges_end_at_series_end() {
        let r = SplitSpec::SMALL.ranges(384).unwrap();
        assert_eq!(r.train, 0..284);
        assert!(r.val.is_empty());
        assert_eq!(r.test, 284..384);
        let r = SplitSpec::LARGE.ranges(8928).unwrap();
        assert_eq!((r.train.len(), r.val.len(), r.test.len()), (8528, 300, 100));
        assert!(SplitSpec::LARGE.ranges(8000).is_err());
    }

    #[test]
    fn history_windows_cover_every_target() {
        let power: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let s = tiny(&power);
        let norm = NormalizerParams::fit(&s, 0..50).unwrap();
        let w = windows_with_history(&s, 40..50, 16, &norm).unwrap();
        assert_eq!(w.target_index, (40..50).collect::<Vec<_>>());
        assert!(windows_with_history(&s, 10..50, 16, &norm).is_err());
    }
}
