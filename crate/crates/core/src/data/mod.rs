//! Hourly market series: CSV ingestion, cleaning, day-sample assembly,
//! standardization and a seeded synthetic generator.

mod clean;
mod features;
mod synth;

use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use clean::clean_series;
pub use features::{
    build_day_samples, fit_standardizer, read_holidays, FeatureBlock, FeatureLayout, Standardizer, STD_FLOOR,
};
pub use synth::{generate_synthetic, NoiseProfile, SynthConfig, Synthetic};

pub const CSV_HEADER: [&str; 4] = ["timestamp", "price_usd_mwh", "load_mw", "temperature_c"];
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:00";

/// One hourly observation. Missing fields are NaN until cleaned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourlyRow {
    pub timestamp: NaiveDateTime,
    pub price: f64,
    pub load: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawHourlySeries {
    pub rows: Vec<HourlyRow>,
}

impl RawHourlySeries {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let ts = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M")
        .map_err(|e| Error::Data(format!("bad timestamp {s:?}: {e}")))?;
    if ts.minute() != 0 || s.len() != 16 {
        return Err(Error::Data(format!(
            "timestamp {s:?} is not of the form YYYY-MM-DDTHH:00"
        )));
    }
    Ok(ts)
}

fn parse_field(s: &str, what: &str, line: u64) -> Result<f64> {
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Data(format!("line {line}: bad {what} value {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::Data(format!("line {line}: non-finite {what} value {s:?}")));
    }
    Ok(v)
}

/// Parses the hourly CSV schema. Empty numeric fields are read as missing.
pub fn read_hourly_csv<R: Read>(reader: R) -> Result<RawHourlySeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Data(format!(
            "expected header {:?}, found {:?}",
            CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows: Vec<HourlyRow> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Data(format!("malformed row: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            return Err(Error::Data(format!(
                "line {line}: expected 4 fields, found {}",
                rec.len()
            )));
        }
        let timestamp = parse_timestamp(&rec[0]).map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        let row = HourlyRow {
            timestamp,
            price: parse_field(&rec[1], "price", line)?,
            load: parse_field(&rec[2], "load", line)?,
            temperature: parse_field(&rec[3], "temperature", line)?,
        };
        if let Some(prev) = rows.last() {
            if row.timestamp == prev.timestamp {
                return Err(Error::Data(format!(
                    "line {line}: duplicate timestamp {}",
                    row.timestamp.format(TIMESTAMP_FORMAT)
                )));
            }
            if row.timestamp < prev.timestamp {
                return Err(Error::Data(format!(
                    "line {line}: timestamp {} is earlier than the previous row",
                    row.timestamp.format(TIMESTAMP_FORMAT)
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    Ok(RawHourlySeries { rows })
}

pub fn load_hourly_csv(path: impl AsRef<Path>) -> Result<RawHourlySeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_hourly_csv(std::io::BufReader::new(file))
}

fn fmt_field(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Writes the CSV schema with LF line endings and shortest round-trip floats.
pub fn write_hourly_csv<W: Write>(series: &RawHourlySeries, mut out: W) -> Result<()> {
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for r in &series.rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.timestamp.format(TIMESTAMP_FORMAT),
            fmt_field(r.price),
            fmt_field(r.load),
            fmt_field(r.temperature)
        )?;
    }
    Ok(())
}

pub fn save_hourly_csv(series: &RawHourlySeries, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_hourly_csv(series, &mut buf)?;
    crate::error::write_text(path, buf)?;
    Ok(())
}
