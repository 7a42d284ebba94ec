//! Forecast accuracy and arbitrage outcome metrics.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HOURS: usize = 24;

fn check_pairs(preds: &[Vec<f64>], trues: &[Vec<f64>]) -> Result<usize> {
    if preds.len() != trues.len() {
        return Err(Error::LengthMismatch {
            what: "prediction days",
            expected: trues.len(),
            actual: preds.len(),
        });
    }
    let mut n = 0;
    for (p, t) in preds.iter().zip(trues) {
        crate::error::check_len("prediction curve", t.len(), p.len())?;
        n += p.len();
    }
    if n == 0 {
        return Err(Error::InvalidInput("no values to score".into()));
    }
    Ok(n)
}

/// Root mean squared error over all day-hours.
pub fn rmse(preds: &[Vec<f64>], trues: &[Vec<f64>]) -> Result<f64> {
    let n = check_pairs(preds, trues)?;
    let sum: f64 = preds
        .iter()
        .zip(trues)
        .flat_map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)))
        .sum();
    Ok((sum / n as f64).sqrt())
}

/// Mean absolute percentage error over all day-hours, as a fraction.
pub fn mape(preds: &[Vec<f64>], trues: &[Vec<f64>]) -> Result<f64> {
    let n = check_pairs(preds, trues)?;
    let mut sum = 0.0;
    for (p, t) in preds.iter().zip(trues) {
        for (a, b) in p.iter().zip(t) {
            if *b == 0.0 {
                return Err(Error::InvalidInput("MAPE undefined for a zero true value".into()));
            }
            sum += ((a - b) / b).abs();
        }
    }
    Ok(sum / n as f64)
}

/// RMSE of each hour of the day across days.
pub fn per_hour_rmse(preds: &[Vec<f64>], trues: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_pairs(preds, trues)?;
    let mut acc = vec![0.0; HOURS];
    for (p, t) in preds.iter().zip(trues) {
        if p.len() != HOURS {
            return Err(Error::InvalidInput(format!("partial day with {} hours", p.len())));
        }
        for (h, (a, b)) in p.iter().zip(t).enumerate() {
            acc[h] += (a - b) * (a - b);
        }
    }
    Ok(acc.into_iter().map(|s| (s / preds.len() as f64).sqrt()).collect())
}

/// Population variance of a vector.
pub fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// Per-day evaluation inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DayOutcome {
    pub date: NaiveDate,
    pub pred_log: Vec<f64>,
    pub true_log: Vec<f64>,
    pub pred_price: Vec<f64>,
    pub true_price: Vec<f64>,
    /// True-price benefit of the schedule optimized on the prediction.
    pub benefit: f64,
    /// Optimal true-price benefit.
    pub oracle_benefit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub rmse_log: f64,
    pub mape_log: f64,
    pub rmse_price: f64,
    pub mape_price: f64,
    pub mean_daily_regret: f64,
    pub mean_daily_benefit: f64,
    pub mean_oracle_benefit: f64,
    pub per_hour_rmse: Vec<f64>,
    /// Summed benefit per calendar month (`YYYY-MM`).
    pub monthly_benefit: BTreeMap<String, f64>,
    pub n_days: usize,
    /// Storage energy capacity that monetary fields are scaled by.
    pub capacity_mwh: f64,
}

impl MetricsReport {
    pub fn from_outcomes(days: &[DayOutcome], capacity_mwh: f64) -> Result<Self> {
        if days.is_empty() {
            return Err(Error::InvalidInput("no days to evaluate".into()));
        }
        if !(capacity_mwh.is_finite() && capacity_mwh > 0.0) {
            return Err(Error::InvalidInput(format!("capacity {capacity_mwh} must be > 0")));
        }
        let pl: Vec<Vec<f64>> = days.iter().map(|d| d.pred_log.clone()).collect();
        let tl: Vec<Vec<f64>> = days.iter().map(|d| d.true_log.clone()).collect();
        let pp: Vec<Vec<f64>> = days.iter().map(|d| d.pred_price.clone()).collect();
        let tp: Vec<Vec<f64>> = days.iter().map(|d| d.true_price.clone()).collect();
        let n = days.len() as f64;
        let mean_daily_benefit = capacity_mwh * days.iter().map(|d| d.benefit).sum::<f64>() / n;
        let mean_oracle_benefit = capacity_mwh * days.iter().map(|d| d.oracle_benefit).sum::<f64>() / n;
        let mut monthly_benefit = BTreeMap::new();
        for d in days {
            *monthly_benefit.entry(d.date.format("%Y-%m").to_string()).or_insert(0.0) += capacity_mwh * d.benefit;
        }
        let report = Self {
            rmse_log: rmse(&pl, &tl)?,
            mape_log: mape(&pl, &tl)?,
            rmse_price: rmse(&pp, &tp)?,
            mape_price: mape(&pp, &tp)?,
            mean_daily_regret: mean_oracle_benefit - mean_daily_benefit,
            mean_daily_benefit,
            mean_oracle_benefit,
            per_hour_rmse: per_hour_rmse(&pl, &tl)?,
            monthly_benefit,
            n_days: days.len(),
            capacity_mwh,
        };
        report.check()?;
        Ok(report)
    }

    /// Verifies the regret identity and finiteness.
    pub fn check(&self) -> Result<()> {
        let gap = self.mean_daily_regret - (self.mean_oracle_benefit - self.mean_daily_benefit);
        if gap.abs() > 1e-9 {
            return Err(Error::Numerical(format!("report regret identity off by {gap}")));
        }
        let scalars = [
            self.rmse_log,
            self.mape_log,
            self.rmse_price,
            self.mape_price,
            self.mean_daily_regret,
            self.mean_daily_benefit,
            self.mean_oracle_benefit,
            self.capacity_mwh,
        ];
        if scalars
            .iter()
            .chain(&self.per_hour_rmse)
            .chain(self.monthly_benefit.values())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Numerical("report contains non-finite values".into()));
        }
        Ok(())
    }

    /// `hour,rmse_log` rows.
    pub fn per_hour_csv(&self) -> String {
        let mut s = String::from("hour,rmse_log\n");
        for (h, v) in self.per_hour_rmse.iter().enumerate() {
            s.push_str(&format!("{h},{}\n", crate::canonical::format_f64(*v)));
        }
        s
    }
}
