use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, NaiveDate, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use super::RawHourlySeries;
use crate::error::{Error, Result};
use crate::ess::{DaySample, PriceCurve};

pub const HOURS: usize = 24;
pub const STD_FLOOR: f64 = 1e-8;

/// One contiguous block of the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureBlock {
    /// Natural log of the previous day's hourly prices.
    PastPrice,
    PastLoad,
    PastTemperature,
    PastTemperatureSq,
    Temperature,
    TemperatureSq,
    IsWeekend,
    IsHoliday,
    /// Day of year divided by 366.
    DayOfYear,
}

impl FeatureBlock {
    pub fn width(self) -> usize {
        match self {
            Self::IsWeekend | Self::IsHoliday | Self::DayOfYear => 1,
            _ => HOURS,
        }
    }
}

/// Ordered feature blocks; stored with checkpoints so inference assembles
/// exactly the vectors the model was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureLayout {
    pub blocks: Vec<FeatureBlock>,
}

impl Default for FeatureLayout {
    fn default() -> Self {
        Self::standard(true)
    }
}

impl FeatureLayout {
    pub fn standard(past_price: bool) -> Self {
        use FeatureBlock::*;
        let mut blocks = Vec::new();
        if past_price {
            blocks.push(PastPrice);
        }
        blocks.extend([
            PastLoad,
            PastTemperature,
            PastTemperatureSq,
            Temperature,
            TemperatureSq,
            IsWeekend,
            IsHoliday,
            DayOfYear,
        ]);
        Self { blocks }
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.width()).sum()
    }
}

struct Day {
    date: NaiveDate,
    price: Vec<f64>,
    load: Vec<f64>,
    temperature: Vec<f64>,
}

fn group_days(series: &RawHourlySeries) -> Result<Vec<Day>> {
    let mut by_date: BTreeMap<NaiveDate, Vec<(u32, f64, f64, f64)>> = BTreeMap::new();
    for r in &series.rows {
        if r.price.is_nan() || r.load.is_nan() || r.temperature.is_nan() {
            return Err(Error::Data(format!(
                "missing value at {}; clean the series first",
                r.timestamp.format(super::TIMESTAMP_FORMAT)
            )));
        }
        by_date
            .entry(r.timestamp.date())
            .or_default()
            .push((r.timestamp.hour(), r.price, r.load, r.temperature));
    }
    let mut days = Vec::with_capacity(by_date.len());
    for (date, mut rows) in by_date {
        rows.sort_by_key(|r| r.0);
        let hours: Vec<u32> = rows.iter().map(|r| r.0).collect();
        if hours != (0..HOURS as u32).collect::<Vec<_>>() {
            return Err(Error::Data(format!("{date} has {} hours, expected 24", rows.len())));
        }
        days.push(Day {
            date,
            price: rows.iter().map(|r| r.1).collect(),
            load: rows.iter().map(|r| r.2).collect(),
            temperature: rows.iter().map(|r| r.3).collect(),
        });
    }
    Ok(days)
}

fn day_features(layout: &FeatureLayout, prev: &Day, day: &Day, holidays: &BTreeSet<NaiveDate>) -> Vec<f64> {
    let mut f = Vec::with_capacity(layout.dim());
    for block in &layout.blocks {
        match block {
            FeatureBlock::PastPrice => f.extend(prev.price.iter().map(|p| p.ln())),
            FeatureBlock::PastLoad => f.extend(&prev.load),
            FeatureBlock::PastTemperature => f.extend(&prev.temperature),
            FeatureBlock::PastTemperatureSq => f.extend(prev.temperature.iter().map(|t| t * t)),
            FeatureBlock::Temperature => f.extend(&day.temperature),
            FeatureBlock::TemperatureSq => f.extend(day.temperature.iter().map(|t| t * t)),
            FeatureBlock::IsWeekend => f.push(matches!(day.date.weekday(), Weekday::Sat | Weekday::Sun) as u8 as f64),
            FeatureBlock::IsHoliday => f.push(holidays.contains(&day.date) as u8 as f64),
            FeatureBlock::DayOfYear => f.push(day.date.ordinal() as f64 / 366.0),
        }
    }
    f
}

/// One sample per day after the first: previous-day history, same-day
/// temperature (taken as known) and calendar features, with that day's
/// price curve as target.
pub fn build_day_samples(
    series: &RawHourlySeries,
    layout: &FeatureLayout,
    holidays: &BTreeSet<NaiveDate>,
) -> Result<Vec<DaySample>> {
    let days = group_days(series)?;
    if days.len() < 2 {
        return Err(Error::Data(format!("need at least 2 full days, found {}", days.len())));
    }
    let needs_past_price = layout.blocks.contains(&FeatureBlock::PastPrice);
    days.windows(2)
        .map(|w| {
            let (prev, day) = (&w[0], &w[1]);
            if prev.date.succ_opt() != Some(day.date) {
                return Err(Error::Data(format!("{} does not follow {}", day.date, prev.date)));
            }
            if needs_past_price && prev.price.iter().any(|&p| p <= 0.0) {
                return Err(Error::Data(format!("non-positive price on {}", prev.date)));
            }
            let features = day_features(layout, prev, day, holidays);
            DaySample::new(day.date, features, PriceCurve::new(day.price.clone())?)
        })
        .collect()
}

/// Holiday file: one `YYYY-MM-DD` per line; blank lines ignored.
pub fn read_holidays(path: impl AsRef<Path>) -> Result<BTreeSet<NaiveDate>> {
    let text = crate::error::read_text(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            NaiveDate::parse_from_str(l, "%Y-%m-%d").map_err(|e| Error::Data(format!("bad holiday date {l:?}: {e}")))
        })
        .collect()
}

/// Per-feature mean and standard deviation fitted on training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

impl Standardizer {
    /// Identity transform of the given width.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            stddev: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_len("feature vector", self.dim(), raw.len())?;
        Ok(raw
            .iter()
            .zip(&self.mean)
            .zip(&self.stddev)
            .map(|((x, m), s)| (x - m) / s)
            .collect())
    }
}

pub fn fit_standardizer(train: &[DaySample]) -> Result<Standardizer> {
    if train.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "standardizer needs at least 2 samples, got {}",
            train.len()
        )));
    }
    let dim = train[0].features.len();
    if let Some(s) = train.iter().find(|s| s.features.len() != dim) {
        return Err(Error::LengthMismatch {
            what: "feature vector",
            expected: dim,
            actual: s.features.len(),
        });
    }
    let n = train.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in train {
        for (m, x) in mean.iter_mut().zip(&s.features) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for s in train {
        for ((v, x), m) in var.iter_mut().zip(&s.features).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let stddev = var.into_iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
    Ok(Standardizer { mean, stddev })
}
