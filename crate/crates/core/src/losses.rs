//! Prediction and decision losses with their gradients with respect to the
//! predicted price curve.
//!
//! The surrogate regret of a prediction `pred` against the realized `truth`
//! is, under the default convention,
//!
//! ```text
//! L(pred) = max_P (truth - 2 pred)'P dt - 2 pred'P*(truth) dt + c*(truth)
//! ```
//!
//! with subgradient `-2 (P*(truth) + P*(truth - 2 pred)) dt`. Both the value
//! and the subgradient need exactly two arbitrage solves, one of which
//! (`P*(truth)`) depends only on the realized price and can be cached in an
//! [`Oracle`].

use serde::{Deserialize, Serialize};

use crate::arbitrage::{benefit_of, optimal_decision, Decision};
use crate::error::{check_len, Error, Result};
use crate::ess::{EssParams, PriceCurve};

/// Sign convention of the surrogate max-term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    /// `max (truth - 2 pred)'P`, gradient `-2 (P*(truth) + P*(truth - 2 pred))`.
    #[default]
    Paper,
    /// `max (2 pred - truth)'P`, gradient `2 (P*(2 pred - truth) - P*(truth))`.
    StandardSpo,
}

/// Price space in which the squared-error term is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MseSpace {
    #[default]
    Log,
    Raw,
}

/// What the predictor emits: log prices (`pred = exp(output)`) or prices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputSpace {
    Log,
    Price,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the squared-error term.
    pub epsilon: f64,
    pub convention: Convention,
    pub mse_space: MseSpace,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            epsilon: 25.0,
            convention: Convention::Paper,
            mse_space: MseSpace::Log,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_finite() && self.epsilon >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )))
        }
    }
}

/// `(1/T) * sum_t (pred_t - truth_t)^2 / 2`.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_len("mse operands", truth.len(), pred.len())?;
    if pred.is_empty() {
        return Err(Error::InvalidInput("mse of empty vectors".into()));
    }
    let sum: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b) / 2.0).sum();
    Ok(sum / pred.len() as f64)
}

/// Componentwise gradient of [`mse`]: `(pred_t - truth_t) / T`.
pub fn mse_grad(pred: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    check_len("mse operands", truth.len(), pred.len())?;
    let t = pred.len() as f64;
    Ok(pred.iter().zip(truth).map(|(a, b)| (a - b) / t).collect())
}

/// Optimal decision under the realized price, reused across loss calls.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub truth: PriceCurve,
    pub decision: Decision,
}

impl Oracle {
    pub fn new(truth: &PriceCurve, p: &EssParams) -> Result<Self> {
        Ok(Self {
            truth: truth.clone(),
            decision: optimal_decision(truth, p)?,
        })
    }

    /// `c*(truth)`.
    pub fn benefit(&self) -> f64 {
        self.decision.objective
    }

    /// Regret of acting on `pred`; one arbitrage solve.
    pub fn regret(&self, pred: &PriceCurve, p: &EssParams) -> Result<f64> {
        check_len("predicted curve", self.truth.len(), pred.len())?;
        let acted = optimal_decision(pred, p)?;
        Ok(self.benefit() - benefit_of(&acted.schedule, &self.truth, p)?)
    }

    /// Surrogate regret value and subgradient; one arbitrage solve.
    pub fn surrogate(&self, pred: &PriceCurve, p: &EssParams, convention: Convention) -> Result<(f64, Vec<f64>)> {
        check_len("predicted curve", self.truth.len(), pred.len())?;
        let effective = match convention {
            Convention::Paper => self.truth.minus_twice(pred)?,
            Convention::StandardSpo => PriceCurve::new(
                pred.values()
                    .iter()
                    .zip(self.truth.values())
                    .map(|(ph, pt)| 2.0 * ph - pt)
                    .collect(),
            )?,
        };
        let inner = optimal_decision(&effective, p)?;
        let oracle_net = &self.decision.schedule.p_net;
        let inner_net = &inner.schedule.p_net;
        let cross = benefit_of(&self.decision.schedule, pred, p)?;
        let value = inner.objective - 2.0 * cross + self.benefit();
        let dt = p.delta_t;
        let grad = match convention {
            Convention::Paper => oracle_net
                .iter()
                .zip(inner_net)
                .map(|(a, b)| -2.0 * (a + b) * dt)
                .collect(),
            Convention::StandardSpo => oracle_net
                .iter()
                .zip(inner_net)
                .map(|(a, b)| 2.0 * (b - a) * dt)
                .collect(),
        };
        Ok((value, grad))
    }
}

/// `c*(truth) - truth'P*(pred) dt`.
pub fn regret(pred: &PriceCurve, truth: &PriceCurve, p: &EssParams) -> Result<f64> {
    Oracle::new(truth, p)?.regret(pred, p)
}

/// Surrogate regret under the default convention.
pub fn surrogate_regret(pred: &PriceCurve, truth: &PriceCurve, p: &EssParams) -> Result<f64> {
    surrogate_regret_with(pred, truth, p, Convention::Paper)
}

pub fn surrogate_regret_with(
    pred: &PriceCurve,
    truth: &PriceCurve,
    p: &EssParams,
    convention: Convention,
) -> Result<f64> {
    Ok(Oracle::new(truth, p)?.surrogate(pred, p, convention)?.0)
}

/// Subgradient of [`surrogate_regret`] with respect to the predicted price.
pub fn surrogate_regret_grad(pred: &PriceCurve, truth: &PriceCurve, p: &EssParams) -> Result<Vec<f64>> {
    surrogate_regret_grad_with(pred, truth, p, Convention::Paper)
}

pub fn surrogate_regret_grad_with(
    pred: &PriceCurve,
    truth: &PriceCurve,
    p: &EssParams,
    convention: Convention,
) -> Result<Vec<f64>> {
    Ok(Oracle::new(truth, p)?.surrogate(pred, p, convention)?.1)
}

fn log_curve(c: &PriceCurve, what: &str) -> Result<Vec<f64>> {
    c.values()
        .iter()
        .map(|&v| {
            if v > 0.0 {
                Ok(v.ln())
            } else {
                Err(Error::InvalidInput(format!(
                    "{what} price {v} is not positive; log-space error undefined"
                )))
            }
        })
        .collect()
}

/// Squared-error term of the hybrid loss in the configured space.
pub fn mse_in_space(pred: &PriceCurve, truth: &PriceCurve, space: MseSpace) -> Result<f64> {
    match space {
        MseSpace::Raw => mse(pred.values(), truth.values()),
        MseSpace::Log => mse(&log_curve(pred, "predicted")?, &log_curve(truth, "true")?),
    }
}

/// Surrogate regret plus `epsilon` times the squared error.
pub fn hybrid_loss(pred: &PriceCurve, truth: &PriceCurve, p: &EssParams, cfg: &LossConfig) -> Result<f64> {
    let oracle = Oracle::new(truth, p)?;
    hybrid_loss_with_oracle(pred, &oracle, p, cfg)
}

pub fn hybrid_loss_with_oracle(pred: &PriceCurve, oracle: &Oracle, p: &EssParams, cfg: &LossConfig) -> Result<f64> {
    let (sreg, _) = oracle.surrogate(pred, p, cfg.convention)?;
    let err = if cfg.epsilon == 0.0 {
        0.0
    } else {
        mse_in_space(pred, &oracle.truth, cfg.mse_space)?
    };
    Ok(sreg + cfg.epsilon * err)
}

/// Gradient of the hybrid loss with respect to the predictor output, split
/// into its two parts (`total = mse_part + regret_part`, componentwise).
#[derive(Debug, Clone, PartialEq)]
pub struct HybridGrad {
    /// `epsilon` times the squared-error gradient.
    pub mse_part: Vec<f64>,
    /// Surrogate-regret subgradient chained into the output space.
    pub regret_part: Vec<f64>,
    pub total: Vec<f64>,
    /// Surrogate regret at this prediction.
    pub surrogate: f64,
}

/// Converts predictor output into a price curve.
pub fn output_to_price(output: &[f64], space: OutputSpace) -> Result<PriceCurve> {
    match space {
        OutputSpace::Log => PriceCurve::new(output.iter().map(|v| v.exp()).collect()),
        OutputSpace::Price => PriceCurve::new(output.to_vec()),
    }
}

/// Squared-error gradient with respect to the output (unweighted).
pub fn mse_output_grad(
    output: &[f64],
    space: OutputSpace,
    truth: &PriceCurve,
    mse_space: MseSpace,
) -> Result<Vec<f64>> {
    check_len("predictor output", truth.len(), output.len())?;
    let pred = output_to_price(output, space)?;
    let t = output.len() as f64;
    let g = match (space, mse_space) {
        (OutputSpace::Log, MseSpace::Log) => {
            let y = log_curve(truth, "true")?;
            mse_grad(output, &y)?
        }
        (OutputSpace::Log, MseSpace::Raw) => pred
            .values()
            .iter()
            .zip(truth.values())
            .map(|(ph, pt)| (ph - pt) / t * ph)
            .collect(),
        (OutputSpace::Price, MseSpace::Raw) => mse_grad(output, truth.values())?,
        (OutputSpace::Price, MseSpace::Log) => {
            let y = log_curve(truth, "true")?;
            let yh = log_curve(&pred, "predicted")?;
            yh.iter()
                .zip(&y)
                .zip(output)
                .map(|((a, b), ph)| (a - b) / t / ph)
                .collect()
        }
    };
    Ok(g)
}

/// Gradient of the hybrid loss w.r.t. the predictor's raw output.
pub fn hybrid_grad(
    output: &[f64],
    space: OutputSpace,
    truth: &PriceCurve,
    p: &EssParams,
    cfg: &LossConfig,
) -> Result<HybridGrad> {
    let oracle = Oracle::new(truth, p)?;
    hybrid_grad_with_oracle(output, space, &oracle, p, cfg)
}

pub fn hybrid_grad_with_oracle(
    output: &[f64],
    space: OutputSpace,
    oracle: &Oracle,
    p: &EssParams,
    cfg: &LossConfig,
) -> Result<HybridGrad> {
    let pred = output_to_price(output, space)?;
    let (surrogate, g) = oracle.surrogate(&pred, p, cfg.convention)?;
    let regret_part: Vec<f64> = match space {
        OutputSpace::Log => g.iter().zip(pred.values()).map(|(gi, ph)| gi * ph).collect(),
        OutputSpace::Price => g,
    };
    let mse_part: Vec<f64> = if cfg.epsilon == 0.0 {
        vec![0.0; output.len()]
    } else {
        mse_output_grad(output, space, &oracle.truth, cfg.mse_space)?
            .into_iter()
            .map(|v| cfg.epsilon * v)
            .collect()
    };
    let total = mse_part.iter().zip(&regret_part).map(|(a, b)| a + b).collect();
    Ok(HybridGrad {
        mse_part,
        regret_part,
        total,
        surrogate,
    })
}
