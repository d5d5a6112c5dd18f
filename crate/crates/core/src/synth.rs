//! Synthetic PV stations.
//!
//! Power follows a half-sine daylight arc centred on solar noon, scaled by a
//! per-day clearness draw and an intra-day AR(1) cloud factor. Feature columns
//! are a noisy irradiance proxy, a smooth diurnal temperature, and two pure
//! noise columns.

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{StationSeries, CADENCE_MINUTES, POINTS_PER_DAY};
use crate::error::{Error, Result};

pub const FEATURE_NAMES: [&str; 4] = ["irradiance", "temperature", "noise_a", "noise_b"];

/// Station climate knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthProfile {
    pub station_id: String,
    /// Clear-sky peak output, kW.
    pub peak_kw: f64,
    /// Cloud-noise strength in `[0, 1]`; 0 is a clear sky every day.
    pub cloud: f64,
    /// Hours of darkness per day, centred on midnight.
    pub night_hours: f64,
    /// First timestamp; must fall on midnight.
    pub start: NaiveDateTime,
}

impl SynthProfile {
    pub fn new(station_id: &str, peak_kw: f64, cloud: f64, night_hours: f64) -> Self {
        Self {
            station_id: station_id.to_string(),
            peak_kw,
            cloud,
            night_hours,
            start: midnight(2018, 6, 1),
        }
    }

    pub fn starting(mut self, start: NaiveDateTime) -> Self {
        self.start = start;
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| {
            Err(Error::Config(format!(
                "synth profile `{}`: {msg}",
                self.station_id
            )))
        };
        if !(self.peak_kw > 0.0 && self.peak_kw.is_finite()) {
            return bad(format!("peak_kw must be positive, got {}", self.peak_kw));
        }
        if !(0.0..=1.0).contains(&self.cloud) {
            return bad(format!("cloud must lie in [0, 1], got {}", self.cloud));
        }
        if !(self.night_hours > 0.0 && self.night_hours < 24.0) {
            return bad(format!(
                "night_hours must lie in (0, 24), got {}",
                self.night_hours
            ));
        }
        if self.start.time() != chrono::NaiveTime::MIN {
            return bad("start must be a midnight timestamp".into());
        }
        Ok(())
    }

    /// Half-sine daylight arc at point `slot` of a day; exactly 0 at night.
    fn solar_arc(&self, slot: usize) -> f64 {
        let hour = slot as f64 * CADENCE_MINUTES as f64 / 60.0;
        let day_len = 24.0 - self.night_hours;
        let sunrise = 12.0 - day_len / 2.0;
        let phase = (hour - sunrise) / day_len;
        if phase > 0.0 && phase < 1.0 {
            (std::f64::consts::PI * phase).sin()
        } else {
            0.0
        }
    }
}

pub fn midnight(y: i32, m: u32, d: u32) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(y, m, d)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid calendar date")
}

/// Generates `days * 96` points. Identical `(seed, days, profile)` gives a
/// bitwise-identical series.
pub fn synth_generate(seed: u64, days: usize, profile: &SynthProfile) -> Result<StationSeries> {
    profile.validate()?;
    if days == 0 {
        return Err(Error::Config("synth: days must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = days * POINTS_PER_DAY;
    let mut series = StationSeries {
        station_id: profile.station_id.clone(),
        timestamps: Vec::with_capacity(n),
        power: Vec::with_capacity(n),
        features: Vec::with_capacity(n),
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    for day in 0..days {
        let clearness = 1.0 - profile.cloud * rng.random::<f64>();
        let temp_offset = 2.0 * gauss(&mut rng);
        let mut ar = 0.0;
        for slot in 0..POINTS_PER_DAY {
            let t = day * POINTS_PER_DAY + slot;
            ar = 0.8 * ar + 0.25 * profile.cloud * gauss(&mut rng);
            let factor = (clearness + ar).clamp(0.05, 1.0);
            let arc = profile.solar_arc(slot);
            let power = profile.peak_kw * arc * factor;
            let irradiance = (1000.0 * arc * factor * (1.0 + 0.05 * gauss(&mut rng))).max(0.0);
            let hour = slot as f64 / 4.0;
            let temperature = 18.0
                + 8.0 * (2.0 * std::f64::consts::PI * (hour - 9.0) / 24.0).sin()
                + temp_offset
                + 0.3 * gauss(&mut rng);
            let noise_a = gauss(&mut rng);
            let noise_b = gauss(&mut rng);
            series
                .timestamps
                .push(profile.start + TimeDelta::minutes(CADENCE_MINUTES * t as i64));
            series.power.push(power.max(0.0));
            series
                .features
                .push(vec![irradiance, temperature, noise_a, noise_b]);
        }
    }
    Ok(series)
}

/// Pinned source-selection / transfer benchmark.
#[derive(Clone, Debug)]
pub struct Benchmark {
    /// Candidate sources in input order; `source_a` is the intended pick.
    pub candidates: Vec<StationSeries>,
    pub target: StationSeries,
}

pub const SOURCE_DAYS: usize = 93;
pub const TARGET_DAYS: usize = 4;

pub fn benchmark_profiles() -> (Vec<SynthProfile>, SynthProfile) {
    let candidates = vec![
        SynthProfile::new("source_a", 15.0, 0.3, 10.0),
        SynthProfile::new("source_b", 15.0, 0.8, 13.0),
        SynthProfile::new("source_c", 17.0, 0.3, 9.0),
    ];
    let target = SynthProfile::new("target", 14.0, 0.3, 10.0).starting(midnight(2018, 9, 2));
    (candidates, target)
}

/// Three 93-day candidates and a 4-day target, all derived from `seed`.
pub fn benchmark(seed: u64) -> Result<Benchmark> {
    let (profiles, target) = benchmark_profiles();
    let candidates = profiles
        .iter()
        .enumerate()
        .map(|(i, p)| synth_generate(seed.wrapping_add(i as u64 + 1), SOURCE_DAYS, p))
        .collect::<Result<_>>()?;
    let target = synth_generate(seed.wrapping_add(100), TARGET_DAYS, &target)?;
    Ok(Benchmark { candidates, target })
}
