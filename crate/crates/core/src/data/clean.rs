use chrono::Duration;

use super::{HourlyRow, RawHourlySeries, TIMESTAMP_FORMAT};
use crate::error::{Error, Result};

/// Half-width of the centered outlier window, in hours (30 days total).
const OUTLIER_HALF_WINDOW: usize = 15 * 24;
const OUTLIER_Z: f64 = 5.0;

/// Fills gaps of at most `max_gap` hours by linear interpolation and
/// replaces price outliers.
///
/// Missing hours and empty fields both count as gaps. A price is an outlier
/// when it is not positive or when its log lies more than five standard
/// deviations from the mean log price of the surrounding 30 days.
pub fn clean_series(raw: &RawHourlySeries, max_gap: usize) -> Result<RawHourlySeries> {
    let Some(first) = raw.rows.first() else {
        return Err(Error::Data("no data rows".into()));
    };
    let start = first.timestamp;
    let last = raw.rows.last().expect("non-empty").timestamp;
    let hours = (last - start).num_hours() as usize + 1;

    let mut cols = [vec![f64::NAN; hours], vec![f64::NAN; hours], vec![f64::NAN; hours]];
    for r in &raw.rows {
        let offset = r.timestamp - start;
        if offset.num_minutes() % 60 != 0 {
            return Err(Error::Data(format!(
                "timestamp {} is off the hourly grid",
                r.timestamp.format(TIMESTAMP_FORMAT)
            )));
        }
        let i = offset.num_hours() as usize;
        cols[0][i] = r.price;
        cols[1][i] = r.load;
        cols[2][i] = r.temperature;
    }
    let stamp = |i: usize| (start + Duration::hours(i as i64)).format(TIMESTAMP_FORMAT).to_string();

    for (col, name) in cols.iter_mut().zip(["price", "load", "temperature"]) {
        if let Some((a, b)) = fill_gaps(col, max_gap) {
            return Err(Error::Data(format!(
                "{name} gap of {} hours from {} exceeds max_gap {max_gap}",
                b - a,
                stamp(a)
            )));
        }
    }

    let outliers = price_outliers(&cols[0]);
    if outliers.iter().any(|&o| o) {
        let mut price = cols[0].clone();
        for (v, &o) in price.iter_mut().zip(&outliers) {
            if o {
                *v = f64::NAN;
            }
        }
        fill_gaps(&mut price, usize::MAX);
        cols[0] = price;
    }

    let rows = (0..hours)
        .map(|i| HourlyRow {
            timestamp: start + Duration::hours(i as i64),
            price: cols[0][i],
            load: cols[1][i],
            temperature: cols[2][i],
        })
        .collect();
    Ok(RawHourlySeries { rows })
}

/// Interpolates NaN runs in place. Returns the first run longer than
/// `max_gap` (as a half-open index range) without modifying it.
fn fill_gaps(col: &mut [f64], max_gap: usize) -> Option<(usize, usize)> {
    let n = col.len();
    let mut i = 0;
    while i < n {
        if !col[i].is_nan() {
            i += 1;
            continue;
        }
        let a = i;
        while i < n && col[i].is_nan() {
            i += 1;
        }
        let b = i;
        if b - a > max_gap {
            return Some((a, b));
        }
        let left = a.checked_sub(1).map(|k| col[k]);
        let right = (b < n).then(|| col[b]);
        match (left, right) {
            (Some(l), Some(r)) => {
                let span = (b - a + 1) as f64;
                for (k, v) in col[a..b].iter_mut().enumerate() {
                    let w = (k + 1) as f64 / span;
                    *v = l + (r - l) * w;
                }
            }
            (Some(v), None) | (None, Some(v)) => col[a..b].fill(v),
            (None, None) => return Some((a, b)),
        }
    }
    None
}

fn price_outliers(price: &[f64]) -> Vec<bool> {
    let n = price.len();
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    let mut cnt = vec![0usize; n + 1];
    for (i, &p) in price.iter().enumerate() {
        let (v, c) = if p > 0.0 { (p.ln(), 1) } else { (0.0, 0) };
        s1[i + 1] = s1[i] + v;
        s2[i + 1] = s2[i] + v * v;
        cnt[i + 1] = cnt[i] + c;
    }
    (0..n)
        .map(|i| {
            let p = price[i];
            if p <= 0.0 {
                return true;
            }
            let lo = i.saturating_sub(OUTLIER_HALF_WINDOW);
            let hi = (i + OUTLIER_HALF_WINDOW + 1).min(n);
            let k = (cnt[hi] - cnt[lo]) as f64;
            if k < 2.0 {
                return false;
            }
            let mean = (s1[hi] - s1[lo]) / k;
            let var = ((s2[hi] - s2[lo]) / k - mean * mean).max(0.0);
            let sd = var.sqrt();
            sd > 1e-12 && ((p.ln() - mean) / sd).abs() > OUTLIER_Z
        })
        .collect()
}
