//! Storage parameters, price curves and schedules shared by every module.
//!
//! Energy capacity is normalized to 1 MWh, so energy bounds are fractions of
//! capacity and power limits equal the charging/discharging depths.

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Physical description of a single storage unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EssParams {
    pub t_periods: usize,
    /// Length of one period in hours.
    pub delta_t: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub e_init: f64,
    pub eta_ch: f64,
    pub eta_dis: f64,
    pub p_ch_max: f64,
    pub p_dis_max: f64,
    pub big_m: f64,
}

impl Default for EssParams {
    fn default() -> Self {
        Self::from_depths(24, 0.5, 0.5)
    }
}

impl EssParams {
    /// Defaults with the given horizon and charge/discharge depths; the
    /// remaining fields follow the reference storage (0.2/0.95 energy band,
    /// 0.90/0.92 efficiencies, 1 h periods, start at mid band).
    pub fn from_depths(t_periods: usize, depth_ch: f64, depth_dis: f64) -> Self {
        let capacity = 1.0;
        let delta_t = 1.0;
        let p_ch_max = depth_ch * capacity / 1.0;
        let p_dis_max = depth_dis * capacity / 1.0;
        Self {
            t_periods,
            delta_t,
            e_min: 0.2,
            e_max: 0.95,
            e_init: 0.5,
            eta_ch: 0.90,
            eta_dis: 0.92,
            p_ch_max,
            p_dis_max,
            big_m: p_ch_max.max(p_dis_max),
        }
    }

    pub fn with_periods(mut self, t_periods: usize) -> Self {
        self.t_periods = t_periods;
        self
    }

    pub fn with_e_init(mut self, e_init: f64) -> Self {
        self.e_init = e_init;
        self
    }

    /// Largest energy increase in one period.
    pub fn max_energy_gain(&self) -> f64 {
        self.eta_ch * self.p_ch_max * self.delta_t
    }

    /// Largest energy decrease in one period.
    pub fn max_energy_loss(&self) -> f64 {
        self.p_dis_max * self.delta_t / self.eta_dis
    }

    /// Stored energy after applying `p_ch`/`p_dis` for one period from `prev`.
    pub fn next_energy(&self, prev: f64, p_ch: f64, p_dis: f64) -> f64 {
        prev + self.eta_ch * p_ch * self.delta_t - p_dis / self.eta_dis * self.delta_t
    }

    /// Returns `Err` carrying every violated invariant, or `Ok(())`.
    pub fn check(&self) -> Result<()> {
        let violations = validate_ess_params(self);
        if violations.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            Err(Error::InvalidParams(msgs.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamViolation {
    pub field: &'static str,
    pub rule: &'static str,
    pub value: f64,
}

impl fmt::Display for ParamViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated ({} = {})", self.rule, self.field, self.value)
    }
}

/// Lists every violated `EssParams` invariant. An empty list means valid.
pub fn validate_ess_params(p: &EssParams) -> Vec<ParamViolation> {
    let mut out = Vec::new();
    let mut push = |ok: bool, field, rule, value| {
        if !ok {
            out.push(ParamViolation { field, rule, value });
        }
    };
    push(p.t_periods >= 1, "t_periods", "t_periods >= 1", p.t_periods as f64);
    push(
        p.delta_t.is_finite() && p.delta_t > 0.0,
        "delta_t",
        "delta_t > 0",
        p.delta_t,
    );
    push(p.e_min.is_finite() && p.e_min >= 0.0, "e_min", "e_min >= 0", p.e_min);
    push(p.e_max.is_finite() && p.e_max <= 1.0, "e_max", "e_max <= 1", p.e_max);
    push(p.e_min < p.e_max, "e_min", "e_min < e_max", p.e_min);
    push(
        p.e_init >= p.e_min && p.e_init <= p.e_max,
        "e_init",
        "e_min <= e_init <= e_max",
        p.e_init,
    );
    push(p.eta_ch > 0.0 && p.eta_ch <= 1.0, "eta_ch", "eta_ch in (0,1]", p.eta_ch);
    push(
        p.eta_dis > 0.0 && p.eta_dis <= 1.0,
        "eta_dis",
        "eta_dis in (0,1]",
        p.eta_dis,
    );
    push(
        p.p_ch_max.is_finite() && p.p_ch_max > 0.0,
        "p_ch_max",
        "p_ch_max > 0",
        p.p_ch_max,
    );
    push(
        p.p_dis_max.is_finite() && p.p_dis_max > 0.0,
        "p_dis_max",
        "p_dis_max > 0",
        p.p_dis_max,
    );
    push(
        p.big_m.is_finite() && p.big_m >= p.p_ch_max.max(p.p_dis_max),
        "big_m",
        "big_m >= max(p_ch_max, p_dis_max)",
        p.big_m,
    );
    out
}

/// Day-ahead prices in $/MWh. Entries may be negative but must be finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PriceCurve(Vec<f64>);

impl PriceCurve {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(t) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite price at index {t}")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| alpha * v).collect())
    }

    /// `self - 2 * other`, the effective price of the surrogate max-term.
    pub fn minus_twice(&self, other: &PriceCurve) -> Result<Self> {
        check_len("price curve", self.len(), other.len())?;
        Self::new(self.0.iter().zip(&other.0).map(|(a, b)| a - 2.0 * b).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl TryFrom<Vec<f64>> for PriceCurve {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PriceCurve> for Vec<f64> {
    fn from(c: PriceCurve) -> Self {
        c.0
    }
}

impl std::ops::Index<usize> for PriceCurve {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Charge/discharge plan over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub p_ch: Vec<f64>,
    pub p_dis: Vec<f64>,
    pub p_net: Vec<f64>,
    pub energy: Vec<f64>,
    pub mu_ch: Vec<bool>,
    pub mu_dis: Vec<bool>,
}

impl Schedule {
    pub fn idle(p: &EssParams) -> Self {
        let t = p.t_periods;
        Self {
            p_ch: vec![0.0; t],
            p_dis: vec![0.0; t],
            p_net: vec![0.0; t],
            energy: vec![p.e_init; t],
            mu_ch: vec![false; t],
            mu_dis: vec![false; t],
        }
    }

    /// Builds a schedule from per-period powers, deriving net power, the
    /// energy trajectory and the state indicators.
    pub fn from_powers(p_ch: Vec<f64>, p_dis: Vec<f64>, p: &EssParams) -> Result<Self> {
        check_len("p_ch", p.t_periods, p_ch.len())?;
        check_len("p_dis", p.t_periods, p_dis.len())?;
        let mut energy = Vec::with_capacity(p.t_periods);
        let mut e = p.e_init;
        for t in 0..p.t_periods {
            e = p.next_energy(e, p_ch[t], p_dis[t]);
            energy.push(e);
        }
        let p_net = p_dis.iter().zip(&p_ch).map(|(d, c)| d - c).collect();
        let mu_ch = p_ch.iter().map(|&c| c > 0.0).collect();
        let mu_dis = p_dis.iter().map(|&d| d > 0.0).collect();
        Ok(Self {
            p_ch,
            p_dis,
            p_net,
            energy,
            mu_ch,
            mu_dis,
        })
    }

    pub fn len(&self) -> usize {
        self.p_net.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_net.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleViolation {
    /// 1-based period index.
    pub period: usize,
    pub kind: ViolationKind,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NetPower,
    EnergyRecursion,
    EnergyBelowMin,
    EnergyAboveMax,
    ChargeOutOfRange,
    DischargeOutOfRange,
    Simultaneous,
    ChargeIndicator,
    DischargeIndicator,
}

impl fmt::Display for ScheduleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            ViolationKind::NetPower => "p_net != p_dis - p_ch",
            ViolationKind::EnergyRecursion => "energy recursion broken",
            ViolationKind::EnergyBelowMin => "energy below e_min",
            ViolationKind::EnergyAboveMax => "energy above e_max",
            ViolationKind::ChargeOutOfRange => "p_ch outside [0, p_ch_max]",
            ViolationKind::DischargeOutOfRange => "p_dis outside [0, p_dis_max]",
            ViolationKind::Simultaneous => "simultaneous charge/discharge",
            ViolationKind::ChargeIndicator => "charging without mu_ch",
            ViolationKind::DischargeIndicator => "discharging without mu_dis",
        };
        write!(f, "{what} at t={} (value {})", self.period, self.value)
    }
}

/// Checks every schedule invariant within `tol`. Length mismatches are hard
/// errors; constraint violations are returned as a list.
pub fn validate_schedule(s: &Schedule, p: &EssParams, tol: f64) -> Result<Vec<ScheduleViolation>> {
    let t_len = p.t_periods;
    check_len("p_ch", t_len, s.p_ch.len())?;
    check_len("p_dis", t_len, s.p_dis.len())?;
    check_len("p_net", t_len, s.p_net.len())?;
    check_len("energy", t_len, s.energy.len())?;
    check_len("mu_ch", t_len, s.mu_ch.len())?;
    check_len("mu_dis", t_len, s.mu_dis.len())?;

    let mut out = Vec::new();
    let mut flag = |ok: bool, t: usize, kind, value| {
        if !ok {
            out.push(ScheduleViolation {
                period: t + 1,
                kind,
                value,
            });
        }
    };
    let mut prev = p.e_init;
    for t in 0..t_len {
        let (c, d, e) = (s.p_ch[t], s.p_dis[t], s.energy[t]);
        let net_err = s.p_net[t] - (d - c);
        flag(net_err.abs() <= tol, t, ViolationKind::NetPower, net_err);
        let expected = p.next_energy(prev, c, d);
        flag(
            (e - expected).abs() <= tol,
            t,
            ViolationKind::EnergyRecursion,
            e - expected,
        );
        flag(e >= p.e_min - tol, t, ViolationKind::EnergyBelowMin, e);
        flag(e <= p.e_max + tol, t, ViolationKind::EnergyAboveMax, e);
        flag(
            c >= -tol && c <= p.p_ch_max + tol,
            t,
            ViolationKind::ChargeOutOfRange,
            c,
        );
        flag(
            d >= -tol && d <= p.p_dis_max + tol,
            t,
            ViolationKind::DischargeOutOfRange,
            d,
        );
        let both_flags = s.mu_ch[t] && s.mu_dis[t];
        let both_powers = c > tol && d > tol;
        flag(!(both_flags || both_powers), t, ViolationKind::Simultaneous, c.min(d));
        flag(c <= tol || s.mu_ch[t], t, ViolationKind::ChargeIndicator, c);
        flag(d <= tol || s.mu_dis[t], t, ViolationKind::DischargeIndicator, d);
        prev = e;
    }
    Ok(out)
}

/// One training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySample {
    pub date: NaiveDate,
    pub features: Vec<f64>,
    pub log_price: Vec<f64>,
    pub price: PriceCurve,
}

impl DaySample {
    pub fn new(date: NaiveDate, features: Vec<f64>, price: PriceCurve) -> Result<Self> {
        if let Some(v) = price.values().iter().find(|v| **v <= 0.0) {
            return Err(Error::Data(format!(
                "non-positive price {v} on {date}; log target undefined"
            )));
        }
        let log_price = price.values().iter().map(|v| v.ln()).collect();
        Ok(Self {
            date,
            features,
            log_price,
            price,
        })
    }
}
