//! Maximum mean discrepancy between sets of daily profiles.

use serde::{Deserialize, Serialize};

use crate::data::{daily_profiles, StationSeries};
use crate::error::{Error, Result};

/// Gaussian kernel bandwidths. When `bandwidths` is empty the set is the
/// median pairwise distance of the pooled samples times each multiplier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmdConfig {
    pub bandwidths: Vec<f64>,
    pub multipliers: Vec<f64>,
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self {
            bandwidths: Vec::new(),
            multipliers: vec![0.25, 0.5, 1.0, 2.0, 4.0],
        }
    }
}

impl MmdConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64]| v.iter().all(|&s| s > 0.0 && s.is_finite());
        if !positive(&self.bandwidths) {
            return Err(Error::Config("mmd.bandwidths must all be positive".into()));
        }
        if self.bandwidths.is_empty()
            && (self.multipliers.is_empty() || !positive(&self.multipliers))
        {
            return Err(Error::Config(
                "mmd.multipliers must be a nonempty list of positive values".into(),
            ));
        }
        Ok(())
    }

    /// Concrete bandwidths for samples drawn from `pool`.
    pub fn resolve(&self, pool: &[&[f64]]) -> Vec<f64> {
        if !self.bandwidths.is_empty() {
            return self.bandwidths.clone();
        }
        let sigma0 = median_distance(pool);
        self.multipliers.iter().map(|m| m * sigma0).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance, or 1 when it is zero or undefined.
pub fn median_distance(pool: &[&[f64]]) -> f64 {
    let mut d = Vec::with_capacity(pool.len() * pool.len().saturating_sub(1) / 2);
    for i in 0..pool.len() {
        for j in i + 1..pool.len() {
            d.push(sq_dist(pool[i], pool[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        *m
    } else {
        1.0
    }
}

fn mean_kernel(x: &[Vec<f64>], y: &[Vec<f64>], sigmas: &[f64]) -> f64 {
    let mut total = 0.0;
    for a in x {
        for b in y {
            let d2 = sq_dist(a, b);
            for s in sigmas {
                total += (-d2 / (2.0 * s * s)).exp();
            }
        }
    }
    total / (x.len() * y.len()) as f64
}

fn lexicographic(a: &[Vec<f64>], b: &[Vec<f64>]) -> std::cmp::Ordering {
    let flat = |s: &[Vec<f64>]| s.iter().flatten().copied().collect::<Vec<f64>>();
    let (fa, fb) = (flat(a), flat(b));
    fa.iter()
        .zip(&fb)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(fa.len().cmp(&fb.len()))
}

/// Biased multi-kernel estimate `E k(a,a') + E k(b,b') - 2 E k(a,b)`, summed
/// over `sigmas`. The two arguments are put in a canonical order first, so
/// the result is bitwise symmetric.
pub fn mmd_squared(a: &[Vec<f64>], b: &[Vec<f64>], sigmas: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Data("mmd: both sample sets must be nonempty".into()));
    }
    if sigmas.is_empty() || sigmas.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Config(
            "mmd: bandwidths must be positive and nonempty".into(),
        ));
    }
    let dim = a[0].len();
    if let Some(bad) = a.iter().chain(b).find(|s| s.len() != dim) {
        return Err(Error::Data(format!(
            "mmd: sample dimension {} differs from {dim}",
            bad.len()
        )));
    }
    let (a, b) = if lexicographic(a, b).is_gt() {
        (b, a)
    } else {
        (a, b)
    };
    Ok(mean_kernel(a, a, sigmas) + mean_kernel(b, b, sigmas) - 2.0 * mean_kernel(a, b, sigmas))
}

/// Outcome of source-domain selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSelection {
    pub selected: String,
    pub selected_index: usize,
    pub bandwidths: Vec<f64>,
    /// `(candidate id, mmd²)` in input order.
    pub table: Vec<(String, f64)>,
}

/// Daily power profiles of a series min-max scaled to its own range.
pub fn normalized_profiles(series: &StationSeries) -> Result<Vec<Vec<f64>>> {
    let (lo, hi) = series
        .power
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &p| {
            (l.min(p), h.max(p))
        });
    if !(hi > lo) {
        return Err(Error::DegenerateChannel(format!(
            "{} power",
            series.station_id
        )));
    }
    let scaled: Vec<f64> = series.power.iter().map(|p| (p - lo) / (hi - lo)).collect();
    let days = daily_profiles(&series.timestamps, &scaled);
    if days.is_empty() {
        return Err(Error::Data(format!(
            "{}: no complete day starting at midnight",
            series.station_id
        )));
    }
    Ok(days)
}

/// Picks the candidate with the smallest MMD to `target`; ties go to the
/// earliest candidate.
pub fn select_source(
    candidates: &[StationSeries],
    target: &StationSeries,
    cfg: &MmdConfig,
) -> Result<SourceSelection> {
    cfg.validate()?;
    if candidates.is_empty() {
        return Err(Error::Data(
            "source selection needs at least one candidate".into(),
        ));
    }
    let target_days = normalized_profiles(target)?;
    let cand_days = candidates
        .iter()
        .map(normalized_profiles)
        .collect::<Result<Vec<_>>>()?;
    let pool: Vec<&[f64]> = cand_days
        .iter()
        .flatten()
        .chain(&target_days)
        .map(Vec::as_slice)
        .collect();
    let sigmas = cfg.resolve(&pool);
    let mut table = Vec::with_capacity(candidates.len());
    let (mut best, mut best_val) = (0, f64::INFINITY);
    for (i, (c, days)) in candidates.iter().zip(&cand_days).enumerate() {
        let v = mmd_squared(days, &target_days, &sigmas)?;
        log::debug!("mmd²({}, {}) = {v:.6}", c.station_id, target.station_id);
        if v < best_val {
            (best, best_val) = (i, v);
        }
        table.push((c.station_id.clone(), v));
    }
    Ok(SourceSelection {
        selected: candidates[best].station_id.clone(),
        selected_index: best,
        bandwidths: sigmas,
        table,
    })
}
