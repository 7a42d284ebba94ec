use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{HourlyRow, RawHourlySeries};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseProfile {
    #[default]
    Uniform,
    /// Noise standard deviation tripled during hours 12 to 16.
    AfternoonHeavy,
}

impl NoiseProfile {
    pub fn scale(self, hour: usize) -> f64 {
        match self {
            Self::AfternoonHeavy if (12..=16).contains(&hour) => 3.0,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub days: usize,
    pub seed: u64,
    pub profile: NoiseProfile,
    /// Base standard deviation of the log-price noise.
    pub noise_std: f64,
    /// Hour-to-hour autocorrelation of the noise.
    pub noise_ar: f64,
    /// Price at average load and temperature, $/MWh.
    pub base_price: f64,
    pub start: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            days: 365,
            seed: 0,
            profile: NoiseProfile::Uniform,
            noise_std: 0.1,
            noise_ar: 0.5,
            base_price: 35.0,
            start: NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
        }
    }
}

/// Generated series together with the log-price noise that was added to
/// each hour.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub series: RawHourlySeries,
    pub noise: Vec<f64>,
}

const LOAD_COEF: f64 = 0.45;
const TEMP_SQ_COEF: f64 = 0.12;

/// Hourly load and temperature from seasonal and daily harmonics with a
/// slowly varying weather anomaly; log price is affine in load and squared
/// temperature plus unit-variance AR(1) noise scaled per hour.
///
/// With `noise_std = 0` the log price of every hour is an exact affine
/// function of that day's temperature, squared temperature and weekend bit.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Synthetic> {
    if cfg.days < 5 {
        return Err(Error::InvalidInput(format!("need at least 5 days, got {}", cfg.days)));
    }
    if !(cfg.noise_std.is_finite() && cfg.noise_std >= 0.0) {
        return Err(Error::InvalidInput(format!("noise_std {} must be >= 0", cfg.noise_std)));
    }
    if !(cfg.base_price.is_finite() && cfg.base_price > 0.0) {
        return Err(Error::InvalidInput(format!(
            "base_price {} must be > 0",
            cfg.base_price
        )));
    }
    if !(cfg.noise_ar.is_finite() && cfg.noise_ar.abs() < 1.0) {
        return Err(Error::InvalidInput(format!(
            "noise_ar {} must lie in (-1, 1)",
            cfg.noise_ar
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
    let t0 = cfg.start.and_hms_opt(0, 0, 0).expect("midnight exists");

    let innovation = (1.0 - cfg.noise_ar * cfg.noise_ar).sqrt();
    let mut anomaly = 0.0;
    let mut u = normal();
    let mut rows = Vec::with_capacity(cfg.days * 24);
    let mut noise = Vec::with_capacity(cfg.days * 24);
    for d in 0..cfg.days {
        let date = cfg.start + Duration::days(d as i64);
        let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
        let season = 2.0 * PI * (date.ordinal() as f64 - 20.0) / 365.0;
        for h in 0..24 {
            anomaly = 0.97 * anomaly + 0.5 * normal();
            let daily = 2.0 * PI * (h as f64 - 9.0) / 24.0;
            let temperature = 12.0 - 10.0 * season.cos() + 4.0 * daily.sin() + anomaly;
            let shape = 0.5 * (1.0 - (2.0 * PI * (h as f64 - 6.0) / 24.0).cos());
            let load = 850.0 + 250.0 * shape + 1.5 * (temperature - 16.0).powi(2) - if weekend { 80.0 } else { 0.0 };

            u = cfg.noise_ar * u + innovation * normal();
            let e = cfg.noise_std * cfg.profile.scale(h) * u;
            let log_price = cfg.base_price.ln()
                + LOAD_COEF * (load - 1000.0) / 200.0
                + TEMP_SQ_COEF * (temperature * temperature - 150.0) / 150.0
                + e;
            rows.push(HourlyRow {
                timestamp: t0 + Duration::hours((d * 24 + h) as i64),
                price: log_price.exp(),
                load,
                temperature,
            });
            noise.push(e);
        }
    }
    Ok(Synthetic {
        series: RawHourlySeries { rows },
        noise,
    })
}
