//! Hampel identifier: sliding median / MAD outlier replacement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HampelConfig {
    /// Full window width `2k + 1`.
    pub window_size: usize,
    pub n_sigma: f64,
    /// MAD-to-sigma scale for Gaussian data.
    pub lambda_mad: f64,
}

impl Default for HampelConfig {
    fn default() -> Self {
        Self {
            window_size: 5,
            n_sigma: 3.0,
            lambda_mad: 1.4826,
        }
    }
}

impl HampelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 || self.window_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "hampel.window_size must be odd and at least 3, got {}",
                self.window_size
            )));
        }
        if !(self.n_sigma > 0.0) {
            return Err(Error::Config("hampel.n_sigma must be positive".into()));
        }
        if !(self.lambda_mad > 0.0) {
            return Err(Error::Config("hampel.lambda_mad must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HampelResult {
    pub corrected: Vec<f64>,
    /// Replaced positions, ascending.
    pub outliers: Vec<usize>,
}

fn median(buf: &mut [f64]) -> f64 {
    buf.sort_unstable_by(f64::total_cmp);
    let n = buf.len();
    if n % 2 == 1 {
        buf[n / 2]
    } else {
        0.5 * (buf[n / 2 - 1] + buf[n / 2])
    }
}

/// Replaces each point whose distance from its local median exceeds
/// `n_sigma * lambda_mad * MAD` by that median. Medians always come from the
/// original series. Near the edges the window shrinks symmetrically.
pub fn hampel_correct(x: &[f64], cfg: &HampelConfig) -> Result<HampelResult> {
    cfg.validate()?;
    if x.len() < cfg.window_size {
        return Err(Error::Data(format!(
            "hampel: series of {} points is shorter than the window {}",
            x.len(),
            cfg.window_size
        )));
    }
    let k = cfg.window_size / 2;
    let n = x.len();
    let mut corrected = x.to_vec();
    let mut outliers = Vec::new();
    let mut buf = Vec::with_capacity(cfg.window_size);
    for i in 0..n {
        let h = k.min(i).min(n - 1 - i);
        buf.clear();
        buf.extend_from_slice(&x[i - h..=i + h]);
        let m = median(&mut buf);
        for v in buf.iter_mut() {
            *v = (*v - m).abs();
        }
        let mad = median(&mut buf);
        if (x[i] - m).abs() > cfg.n_sigma * cfg.lambda_mad * mad {
            corrected[i] = m;
            outliers.push(i);
        }
    }
    Ok(HampelResult {
        corrected,
        outliers,
    })
}
