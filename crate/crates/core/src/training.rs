//! Hybrid gradient training: per batch, each day's output gradient is split
//! into the weighted squared-error part and the surrogate-regret part, both
//! are back-propagated, and the accumulated sum drives one optimizer update.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arbitrage::{benefit_of, optimal_decision};
use crate::error::{Error, Result};
use crate::ess::{DaySample, EssParams, PriceCurve};
use crate::exec::{try_map_indexed, Execution};
use crate::losses::{self, LossConfig, MseSpace, Oracle, OutputSpace};
use crate::metrics::{DayOutcome, MetricsReport};
use crate::predictor::{backward, forward, predict_log, Mode, PredictorParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    #[default]
    Hybrid,
    MseOnly,
    RegretOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: LossConfig,
    pub optimizer: Optimizer,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 100,
            learning_rate: 1e-6,
            loss: LossConfig::default(),
            optimizer: Optimizer::Adam,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            early_stop_patience: 10,
            seed: 0,
            mode: TrainMode::Hybrid,
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) || self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and eps must be > 0".into());
        }
        self.loss.validate()
    }
}

/// Train / validation / test partition by whole days.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<DaySample>,
    pub validation: Vec<DaySample>,
    pub test: Vec<DaySample>,
}

/// 20% of days (at least one) to test, 20% of the rest (at least one) to
/// validation, the remainder to training. Each part keeps input order.
pub fn split_dataset(days: &[DaySample], seed: u64) -> Result<Split> {
    let n = days.len();
    if n < 5 {
        return Err(Error::InvalidInput(format!("need at least 5 days to split, got {n}")));
    }
    let n_test = (n / 5).max(1);
    let n_val = ((n - n_test) / 5).max(1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut part = vec![0u8; n];
    for &i in &idx[..n_test] {
        part[i] = 2;
    }
    for &i in &idx[n_test..n_test + n_val] {
        part[i] = 1;
    }
    let pick = |k: u8| -> Vec<DaySample> {
        days.iter()
            .zip(&part)
            .filter(|(_, &p)| p == k)
            .map(|(d, _)| d.clone())
            .collect()
    };
    Ok(Split {
        train: pick(0),
        validation: pick(1),
        test: pick(2),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One Adam update with bias correction, in place.
pub fn adam_step(
    params: &mut [f64],
    state: &mut AdamState,
    grads: &[f64],
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    crate::error::check_len("gradient", params.len(), grads.len())?;
    crate::error::check_len("adam state", params.len(), state.m.len())?;
    state.step += 1;
    let (b1, b2) = betas;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Accumulated parameter gradient of one batch, by part.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrad {
    /// Sum of back-propagated weighted squared-error gradients.
    pub mse: Vec<f64>,
    /// Sum of back-propagated surrogate-regret gradients.
    pub regret: Vec<f64>,
    /// `mse + regret`, componentwise.
    pub total: Vec<f64>,
}

fn dropout_seed(seed: u64, batch_key: usize, day: usize) -> u64 {
    let mut z = seed
        ^ (batch_key as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (day as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn with_day<T>(date: chrono::NaiveDate, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Day {
        date,
        source: Box::new(e),
    })
}

/// Gradient of the configured loss summed over `batch`.
///
/// `batch_key` selects the dropout masks. `oracles[i]` must hold the optimal decision for `batch[i]`'s true curve.
pub fn batch_gradient(
    params: &PredictorParams,
    batch: &[&DaySample],
    oracles: &[&Oracle],
    cfg: &TrainConfig,
    ess: &EssParams,
    batch_key: usize,
) -> Result<BatchGrad> {
    crate::error::check_len("oracle cache", batch.len(), oracles.len())?;
    let work: Vec<(&DaySample, &Oracle)> = batch.iter().copied().zip(oracles.iter().copied()).collect();
    let per_day = try_map_indexed(cfg.execution, &work, |i, (day, oracle)| {
        with_day(
            day.date,
            day_gradient(params, day, oracle, cfg, ess, dropout_seed(cfg.seed, batch_key, i)),
        )
    })?;
    let n = params.param_count();
    let mut mse = vec![0.0; n];
    let mut regret = vec![0.0; n];
    for (gm, gr) in &per_day {
        for (a, b) in mse.iter_mut().zip(gm) {
            *a += b;
        }
        for (a, b) in regret.iter_mut().zip(gr) {
            *a += b;
        }
    }
    let total = mse.iter().zip(&regret).map(|(a, b)| a + b).collect();
    Ok(BatchGrad { mse, regret, total })
}

fn day_gradient(
    params: &PredictorParams,
    day: &DaySample,
    oracle: &Oracle,
    cfg: &TrainConfig,
    ess: &EssParams,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = params.standardizer.apply(&day.features)?;
    let (out, trace) = forward(params, &x, Mode::Train, seed)?;
    let trace = trace.expect("train mode returns a trace");
    let (mse_out, regret_out) = match cfg.mode {
        TrainMode::MseOnly => {
            let g = losses::mse_output_grad(&out, OutputSpace::Log, &oracle.truth, cfg.loss.mse_space)?;
            (g, None)
        }
        TrainMode::Hybrid => {
            let h = losses::hybrid_grad_with_oracle(&out, OutputSpace::Log, oracle, ess, &cfg.loss)?;
            (h.mse_part, Some(h.regret_part))
        }
        TrainMode::RegretOnly => {
            let loss = LossConfig {
                epsilon: 0.0,
                ..cfg.loss
            };
            let h = losses::hybrid_grad_with_oracle(&out, OutputSpace::Log, oracle, ess, &loss)?;
            (h.mse_part, Some(h.regret_part))
        }
    };
    if mse_out
        .iter()
        .chain(regret_out.iter().flatten())
        .any(|v| !v.is_finite())
    {
        return Err(Error::Numerical("non-finite loss gradient".into()));
    }
    let gm = backward(params, &trace, &mse_out)?;
    let gr = match regret_out {
        Some(g) => backward(params, &trace, &g)?,
        None => vec![0.0; gm.len()],
    };
    Ok((gm, gr))
}

/// Per-epoch averages over each split. MSE is the log-space squared error;
/// regrets are per-day means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub train_sreg: f64,
    pub val_mse: f64,
    pub val_regret: f64,
    pub test_mse: f64,
    pub test_regret: f64,
    /// Validation surrogate regret; the early-stopping score outside
    /// squared-error-only training.
    pub val_sreg: f64,
    pub updates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (0 = initial parameters).
    pub best_epoch: usize,
    pub best_score: f64,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,train_mse,train_sreg,val_mse,val_regret,test_mse,test_regret";

    pub fn to_csv(&self) -> String {
        use crate::canonical::format_f64 as f;
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch,
                f(r.train_mse),
                f(r.train_sreg),
                f(r.val_mse),
                f(r.val_regret),
                f(r.test_mse),
                f(r.test_regret)
            ));
        }
        s
    }
}

/// Mean squared error, surrogate regret and regret of the current
/// parameters over a set of days.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetScores {
    pub mse: f64,
    pub sreg: f64,
    pub regret: f64,
}

pub fn score_days(
    params: &PredictorParams,
    days: &[DaySample],
    oracles: &[Oracle],
    ess: &EssParams,
    loss: &LossConfig,
    exec: Execution,
) -> Result<SetScores> {
    crate::error::check_len("oracle cache", days.len(), oracles.len())?;
    if days.is_empty() {
        return Ok(SetScores {
            mse: f64::NAN,
            sreg: f64::NAN,
            regret: f64::NAN,
        });
    }
    let per_day = try_map_indexed(exec, days, |i, day| {
        with_day(
            day.date,
            (|| {
                let out = predict_log(params, &day.features)?;
                let pred = losses::output_to_price(&out, OutputSpace::Log)?;
                let mse = match loss.mse_space {
                    MseSpace::Log => losses::mse(&out, &day.log_price)?,
                    MseSpace::Raw => losses::mse(pred.values(), day.price.values())?,
                };
                let (sreg, _) = oracles[i].surrogate(&pred, ess, loss.convention)?;
                let regret = oracles[i].regret(&pred, ess)?;
                if !(mse.is_finite() && sreg.is_finite() && regret.is_finite()) {
                    return Err(Error::Numerical("non-finite loss".into()));
                }
                Ok((mse, sreg, regret))
            })(),
        )
    })?;
    let n = days.len() as f64;
    let mut s = SetScores {
        mse: 0.0,
        sreg: 0.0,
        regret: 0.0,
    };
    for (m, sr, r) in per_day {
        s.mse += m;
        s.sreg += sr;
        s.regret += r;
    }
    s.mse /= n;
    s.sreg /= n;
    s.regret /= n;
    Ok(s)
}

pub fn oracles_for(days: &[DaySample], ess: &EssParams, exec: Execution) -> Result<Vec<Oracle>> {
    try_map_indexed(exec, days, |_, d| with_day(d.date, Oracle::new(&d.price, ess)))
}

fn early_stop_score(mode: TrainMode, s: &SetScores) -> f64 {
    match mode {
        TrainMode::MseOnly => s.mse,
        _ => s.sreg,
    }
}

/// Runs the configured training loop and returns the parameters with the
/// best validation score seen (including the initial parameters).
pub fn train_model(
    split: &Split,
    init: PredictorParams,
    cfg: &TrainConfig,
    ess: &EssParams,
) -> Result<(PredictorParams, TrainHistory)> {
    cfg.validate()?;
    ess.check()?;
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(Error::InvalidInput(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let exec = cfg.execution;
    let train_oracles = oracles_for(&split.train, ess, exec)?;
    let val_oracles = oracles_for(&split.validation, ess, exec)?;
    let test_oracles = oracles_for(&split.test, ess, exec)?;

    let mut params = init;
    let mut flat = params.to_flat();
    let mut adam = AdamState::new(flat.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..split.train.len()).collect();

    let val0 = score_days(&params, &split.validation, &val_oracles, ess, &cfg.loss, exec)?;
    let mut best = (early_stop_score(cfg.mode, &val0), 0usize, params.clone());
    let mut records = Vec::new();
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut updates = 0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&DaySample> = chunk.iter().map(|&i| &split.train[i]).collect();
            let oracles: Vec<&Oracle> = chunk.iter().map(|&i| &train_oracles[i]).collect();
            let grad = batch_gradient(&params, &batch, &oracles, cfg, ess, epoch * 1_000_003 + bi)?;
            match cfg.optimizer {
                Optimizer::Adam => adam_step(
                    &mut flat,
                    &mut adam,
                    &grad.total,
                    cfg.learning_rate,
                    cfg.adam_betas,
                    cfg.adam_eps,
                )?,
                Optimizer::Sgd => {
                    for (p, g) in flat.iter_mut().zip(&grad.total) {
                        *p -= cfg.learning_rate * g;
                    }
                }
            }
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("parameters diverged in epoch {epoch}")));
            }
            params.set_flat(&flat)?;
            updates += 1;
        }

        let tr = score_days(&params, &split.train, &train_oracles, ess, &cfg.loss, exec)?;
        let va = score_days(&params, &split.validation, &val_oracles, ess, &cfg.loss, exec)?;
        let te = score_days(&params, &split.test, &test_oracles, ess, &cfg.loss, exec)?;
        records.push(EpochRecord {
            epoch,
            train_mse: tr.mse,
            train_sreg: tr.sreg,
            val_mse: va.mse,
            val_regret: va.regret,
            test_mse: te.mse,
            test_regret: te.regret,
            val_sreg: va.sreg,
            updates,
        });
        let score = early_stop_score(cfg.mode, &va);
        if score < best.0 {
            best = (score, epoch, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    let (best_score, best_epoch, best_params) = best;
    Ok((
        best_params,
        TrainHistory {
            records,
            best_epoch,
            best_score,
        },
    ))
}

/// Forecast accuracy and arbitrage outcomes of `params` on `days`.
pub fn evaluate_model(
    params: &PredictorParams,
    days: &[DaySample],
    ess: &EssParams,
    capacity_mwh: f64,
    exec: Execution,
) -> Result<MetricsReport> {
    ess.check()?;
    let outcomes = try_map_indexed(exec, days, |_, day| {
        with_day(
            day.date,
            (|| {
                let pred_log = predict_log(params, &day.features)?;
                let pred = PriceCurve::new(pred_log.iter().map(|v| v.exp()).collect())?;
                let acted = optimal_decision(&pred, ess)?;
                let oracle = optimal_decision(&day.price, ess)?;
                Ok(DayOutcome {
                    date: day.date,
                    true_log: day.log_price.clone(),
                    pred_price: pred.values().to_vec(),
                    true_price: day.price.values().to_vec(),
                    pred_log,
                    benefit: benefit_of(&acted.schedule, &day.price, ess)?,
                    oracle_benefit: oracle.objective,
                })
            })(),
        )
    })?;
    MetricsReport::from_outcomes(&outcomes, capacity_mwh)
}
