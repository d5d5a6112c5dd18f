//! Multi-class ReliefF on range-normalised continuous features.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReliefFConfig {
    pub k_neighbors: usize,
    /// Reference instances drawn; `None` uses every instance in order.
    pub m_samples: Option<usize>,
    /// Equal-frequency classes for the continuous target.
    pub n_bins: usize,
    pub top_n: usize,
    pub seed: u64,
}

impl Default for ReliefFConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 70,
            m_samples: None,
            n_bins: 10,
            top_n: 3,
            seed: 0,
        }
    }
}

impl ReliefFConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(Error::Config(
                "relieff.k_neighbors must be at least 1".into(),
            ));
        }
        if self.n_bins < 2 {
            return Err(Error::Config("relieff.n_bins must be at least 2".into()));
        }
        if self.top_n == 0 {
            return Err(Error::Config("relieff.top_n must be at least 1".into()));
        }
        if self.m_samples == Some(0) {
            return Err(Error::Config("relieff.m_samples must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub weights: Vec<f64>,
    /// Feature indices by descending weight; ties keep the lower index first.
    pub order: Vec<usize>,
}

/// Equal-frequency class labels `0..c` with `c <= n_bins`. Tied values share
/// a class, so heavy ties (such as night zeros) can leave fewer classes.
pub fn discretize_equal_frequency(values: &[f64], n_bins: usize) -> Vec<usize> {
    if values.is_empty() || n_bins == 0 {
        return vec![0; values.len()];
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges: Vec<f64> = (1..n_bins).map(|q| sorted[q * n / n_bins]).collect();
    edges.dedup();
    let raw: Vec<usize> = values
        .iter()
        .map(|v| edges.partition_point(|e| e <= v))
        .collect();
    let mut used = vec![false; edges.len() + 1];
    raw.iter().for_each(|&c| used[c] = true);
    let mut remap = vec![0; used.len()];
    let mut next = 0;
    for (c, &u) in used.iter().enumerate() {
        if u {
            remap[c] = next;
            next += 1;
        }
    }
    raw.iter().map(|&c| remap[c]).collect()
}

/// Each feature divided into `[0, 1]` by its range; constant features
/// become all zeros.
fn range_normalize(x: &[Vec<f64>], n_feat: usize) -> Vec<Vec<f64>> {
    let mut out = x.to_vec();
    for a in 0..n_feat {
        let (lo, hi) = x
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), r| {
                (l.min(r[a]), h.max(r[a]))
            });
        let span = hi - lo;
        for row in &mut out {
            row[a] = if span > 0.0 {
                (row[a] - lo) / span
            } else {
                0.0
            };
        }
    }
    out
}

/// ReliefF weights:
/// `W(A) -= sum_j diff(A,R,H_j) / (m k)` over the `k` nearest hits and
/// `W(A) += sum_{C != class(R)} P(C) / (1 - P(class(R))) * sum_j diff(A,R,M_j(C)) / (m k)`
/// over the `k` nearest misses of every other class, with
/// `diff = |R[A] - I[A]| / (max A - min A)`.
pub fn relieff_rank(
    features: &[Vec<f64>],
    classes: &[usize],
    cfg: &ReliefFConfig,
) -> Result<FeatureRanking> {
    cfg.validate()?;
    let n = features.len();
    if n == 0 || classes.len() != n {
        return Err(Error::Data(format!(
            "relieff: {n} instances but {} class labels",
            classes.len()
        )));
    }
    let n_feat = features[0].len();
    if features.iter().any(|r| r.len() != n_feat) {
        return Err(Error::Data("relieff: ragged feature matrix".into()));
    }
    let n_class = classes.iter().max().map_or(0, |c| c + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_class];
    for (i, &c) in classes.iter().enumerate() {
        members[c].push(i);
    }
    let k = cfg.k_neighbors;
    for (c, m) in members.iter().enumerate() {
        if !m.is_empty() && m.len() < k + 1 {
            return Err(Error::ClassTooSmall {
                class: c,
                size: m.len(),
                needed: k + 1,
                k,
            });
        }
    }
    let prior: Vec<f64> = members.iter().map(|m| m.len() as f64 / n as f64).collect();
    let x = range_normalize(features, n_feat);

    let refs: Vec<usize> = match cfg.m_samples {
        Some(m) if m < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut idx = sample(&mut rng, n, m).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    };
    let m = refs.len() as f64;
    let mut weights = vec![0.0; n_feat];
    let mut dist: Vec<(f64, usize)> = Vec::new();
    for &r in &refs {
        let rc = classes[r];
        for (c, group) in members.iter().enumerate() {
            if group.is_empty() || (c != rc && prior[rc] >= 1.0) {
                continue;
            }
            dist.clear();
            dist.extend(group.iter().filter(|&&i| i != r).map(|&i| {
                let d: f64 = x[r].iter().zip(&x[i]).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            }));
            let by_key =
                |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            dist.select_nth_unstable_by(k - 1, by_key);
            let coef = if c == rc {
                -1.0
            } else {
                prior[c] / (1.0 - prior[rc])
            } / (m * k as f64);
            for &(_, i) in &dist[..k] {
                for a in 0..n_feat {
                    weights[a] += coef * (x[r][a] - x[i][a]).abs();
                }
            }
        }
    }
    let order = rank_desc(&weights);
    Ok(FeatureRanking { weights, order })
}

fn rank_desc(weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order
}

/// The `top_n` highest-weighted feature indices, highest first.
pub fn select_features(ranking: &FeatureRanking, top_n: usize) -> Result<Vec<usize>> {
    let n = ranking.weights.len();
    if top_n == 0 || top_n > n {
        return Err(Error::Config(format!(
            "top_n must lie in 1..={n}, got {top_n}"
        )));
    }
    Ok(ranking.order[..top_n].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_order_and_ties() {
        let r = FeatureRanking {
            weights: vec![0.5, -0.1, 0.3],
            order: rank_desc(&[0.5, -0.1, 0.3]),
        };
        assert_eq!(select_features(&r, 2).unwrap(), vec![0, 2]);
        assert_eq!(select_features(&r, 3).unwrap(), vec![0, 2, 1]);
        assert!(select_features(&r, 4).is_err());
        assert_eq!(rank_desc(&[0.2, 0.4, 0.2, 0.4]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn equal_frequency_bins() {
        let v: Vec<f64> = (0..100).map(f64::from).collect();
        let c = discretize_equal_frequency(&v, 10);
        for b in 0..10 {
            assert_eq!(c.iter().filter(|&&x| x == b).count(), 10);
        }
        // Heavy ties collapse into one class and the labels stay dense.
        let mut v = vec![0.0; 60];
        v.extend((1..=40).map(f64::from));
        let c = discretize_equal_frequency(&v, 10);
        assert!(c[..60].iter().all(|&x| x == 0));
        let max = *c.iter().max().unwrap();
        assert!((0..=max).all(|b| c.contains(&b)));
    }

    #[test]
    fn small_class_is_named() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let mut y = vec![0; 10];
        y[9] = 1;
        let cfg = ReliefFConfig {
            k_neighbors: 2,
            ..ReliefFConfig::default()
        };
        assert!(matches!(
            relieff_rank(&x, &y, &cfg),
            Err(Error::ClassTooSmall {
                class: 1,
                size: 1,
                ..
            })
        ));
    }
}
