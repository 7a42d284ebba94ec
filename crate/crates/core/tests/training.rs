mod common;

use dfp_core::data::{fit_standardizer, FeatureLayout, NoiseProfile, SynthConfig};
use dfp_core::ess::{DaySample, EssParams};
use dfp_core::exec::Execution;
use dfp_core::losses::{self, LossConfig, Oracle, OutputSpace};
use dfp_core::metrics::MetricsReport;
use dfp_core::predictor::{backward, forward, init_linear, init_resnet, Mode, PredictorParams, ResnetConfig};
use dfp_core::training::{
    batch_gradient, evaluate_model, oracles_for, split_dataset, train_model, Optimizer, Split, TrainConfig, TrainMode,
};

fn small_split(days: usize, seed: u64, noise_std: f64) -> Split {
    let cfg = SynthConfig {
        days,
        seed,
        profile: NoiseProfile::AfternoonHeavy,
        noise_std,
        ..SynthConfig::default()
    };
    split_dataset(&common::synthetic_days(&cfg, &common::driver_layout()), seed).unwrap()
}

fn fast_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 4,
        batch_size: 16,
        learning_rate: 1e-2,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn batch_gradient_is_sum_of_two_back_propagations() {
    let split = small_split(40, 1, 0.2);
    let params = init_linear(&split.train, fit_standardizer(&split.train).unwrap()).unwrap();
    let ess = EssParams::default();
    let cfg = fast_cfg();
    let batch: Vec<&DaySample> = split.train.iter().take(7).collect();
    let oracles: Vec<Oracle> = batch.iter().map(|d| Oracle::new(&d.price, &ess).unwrap()).collect();
    let orefs: Vec<&Oracle> = oracles.iter().collect();
    let got = batch_gradient(&params, &batch, &orefs, &cfg, &ess, 0).unwrap();

    let n = params.param_count();
    let (mut mse, mut reg) = (vec![0.0; n], vec![0.0; n]);
    for (d, o) in batch.iter().zip(&oracles) {
        let x = params.standardizer.apply(&d.features).unwrap();
        let (out, trace) = forward(&params, &x, Mode::Train, 0).unwrap();
        let trace = trace.unwrap();
        let unit = losses::mse_output_grad(&out, OutputSpace::Log, &d.price, cfg.loss.mse_space).unwrap();
        let weighted: Vec<f64> = unit.iter().map(|v| cfg.loss.epsilon * v).collect();
        let pred = losses::output_to_price(&out, OutputSpace::Log).unwrap();
        let (_, g) = o.surrogate(&pred, &ess, cfg.loss.convention).unwrap();
        let chained: Vec<f64> = g.iter().zip(pred.values()).map(|(a, b)| a * b).collect();
        for (a, b) in mse.iter_mut().zip(backward(&params, &trace, &weighted).unwrap()) {
            *a += b;
        }
        for (a, b) in reg.iter_mut().zip(backward(&params, &trace, &chained).unwrap()) {
            *a += b;
        }
    }
    assert_eq!(got.mse, mse);
    assert_eq!(got.regret, reg);
    for i in 0..n {
        assert_eq!(got.total[i], mse[i] + reg[i]);
    }
}

#[test]
fn one_update_per_batch() {
    let split = small_split(60, 2, 0.2);
    let init = init_linear(&split.train, fit_standardizer(&split.train).unwrap()).unwrap();
    for batch_size in [1, 7, 16, 100] {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size,
            early_stop_patience: 100,
            ..fast_cfg()
        };
        let (_, h) = train_model(&split, init.clone(), &cfg, &EssParams::default()).unwrap();
        let want = split.train.len().div_ceil(batch_size);
        assert_eq!(h.records.len(), 2);
        assert!(h.records.iter().all(|r| r.updates == want), "batch {batch_size}");
    }
}

#[test]
fn full_batch_epoch_is_one_gradient_step() {
    let split = small_split(40, 3, 0.1);
    let mut init = init_linear(&split.train, fit_standardizer(&split.train).unwrap()).unwrap();
    init.layers[0].theta_x.data.iter_mut().for_each(|v| *v = 0.0);
    let ess = EssParams::default();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: split.train.len(),
        learning_rate: 1e-3,
        optimizer: Optimizer::Sgd,
        mode: TrainMode::MseOnly,
        ..fast_cfg()
    };
    let (trained, h) = train_model(&split, init.clone(), &cfg, &ess).unwrap();
    assert_eq!(
        h.best_epoch, 1,
        "a small step from zero weights must improve validation error"
    );

    let oracles = oracles_for(&split.train, &ess, Execution::Sequential).unwrap();
    let all: Vec<&DaySample> = split.train.iter().collect();
    let orefs: Vec<&Oracle> = oracles.iter().collect();
    // the shuffled order changes only the summation order
    let g = batch_gradient(&init, &all, &orefs, &cfg, &ess, 0).unwrap();
    let want: Vec<f64> = init
        .to_flat()
        .iter()
        .zip(&g.total)
        .map(|(p, g)| p - cfg.learning_rate * g)
        .collect();
    for (a, b) in trained.to_flat().iter().zip(&want) {
        assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }
}

#[test]
fn training_is_reproducible_and_mode_independent() {
    let split = small_split(50, 4, 0.2);
    let st = fit_standardizer(&split.train).unwrap();
    let cfg_net = ResnetConfig {
        hidden_widths: vec![6],
        dropout_rate: 0.2,
        ..ResnetConfig::default()
    };
    let init = init_resnet(&split.train, st, &cfg_net, 5).unwrap();
    let ess = EssParams::default();
    let par = fast_cfg();
    let seq = TrainConfig {
        execution: Execution::Sequential,
        ..par.clone()
    };
    let a = train_model(&split, init.clone(), &par, &ess).unwrap();
    let b = train_model(&split, init.clone(), &par, &ess).unwrap();
    let c = train_model(&split, init, &seq, &ess).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1.to_csv(), b.1.to_csv());
    assert_eq!(a.0, c.0);
    assert_eq!(a.1.to_csv(), c.1.to_csv());
}

#[test]
fn early_stopping_keeps_best_validation_score() {
    let split = small_split(60, 5, 0.3);
    let init = init_linear(&split.train, fit_standardizer(&split.train).unwrap()).unwrap();
    for mode in [TrainMode::Hybrid, TrainMode::MseOnly, TrainMode::RegretOnly] {
        let cfg = TrainConfig {
            epochs: 12,
            early_stop_patience: 3,
            mode,
            ..fast_cfg()
        };
        let (_, h) = train_model(&split, init.clone(), &cfg, &EssParams::default()).unwrap();
        let score = |r: &dfp_core::training::EpochRecord| {
            if mode == TrainMode::MseOnly {
                r.val_mse
            } else {
                r.val_sreg
            }
        };
        assert!(h.records.iter().all(|r| score(r) >= h.best_score));
        if h.best_epoch > 0 {
            assert_eq!(score(&h.records[h.best_epoch - 1]), h.best_score);
        }
        assert!(h.records.len() <= h.best_epoch + cfg.early_stop_patience);
    }
}

#[test]
fn noiseless_pipeline_reaches_tiny_rmse() {
    let split = small_split(120, 6, 0.0);
    let init = init_linear(&split.train, fit_standardizer(&split.train).unwrap()).unwrap();
    let ess = EssParams::default();
    let cfg = TrainConfig {
        epochs: 200,
        mode: TrainMode::MseOnly,
        ..fast_cfg()
    };
    let (p, _) = train_model(&split, init, &cfg, &ess).unwrap();
    let r = evaluate_model(&p, &split.test, &ess, 1.0, Execution::Parallel).unwrap();
    assert!(r.rmse_log < 1e-3, "rmse {}", r.rmse_log);
    assert!(r.mean_daily_regret.abs() < 1e-6);
}

#[test]
fn squared_error_training_recovers_from_perturbed_weights() {
    let split = small_split(120, 7, 0.0);
    let mut init = init_linear(&split.train, fit_standardizer(&split.train).unwrap()).unwrap();
    for (i, v) in init.layers[0].theta_x.data.iter_mut().enumerate() {
        *v += if i % 2 == 0 { 0.02 } else { -0.02 };
    }
    let ess = EssParams::default();
    let before = evaluate_model(&init, &split.test, &ess, 1.0, Execution::Parallel).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 100,
        mode: TrainMode::MseOnly,
        early_stop_patience: 200,
        ..fast_cfg()
    };
    let (p, _) = train_model(&split, init, &cfg, &ess).unwrap();
    let after = evaluate_model(&p, &split.test, &ess, 1.0, Execution::Parallel).unwrap();
    assert!(
        after.rmse_log < 0.5 * before.rmse_log,
        "{} -> {}",
        before.rmse_log,
        after.rmse_log
    );
}

#[test]
fn squared_error_model_errs_most_in_the_afternoon() {
    let cfg = SynthConfig {
        days: 365,
        seed: 8,
        profile: NoiseProfile::AfternoonHeavy,
        noise_std: 0.2,
        ..SynthConfig::default()
    };
    let days = common::synthetic_days(&cfg, &FeatureLayout::default());
    let split = split_dataset(&days, 8).unwrap();
    let params = init_linear(&split.train, fit_standardizer(&split.train).unwrap()).unwrap();
    let r = evaluate_model(&params, &split.test, &EssParams::default(), 1.0, Execution::Parallel).unwrap();
    let (mut hi, mut lo) = (0.0, 0.0);
    for (h, v) in r.per_hour_rmse.iter().enumerate() {
        if (12..=16).contains(&h) {
            hi += v / 5.0;
        } else {
            lo += v / 19.0;
        }
    }
    assert!(hi > lo, "afternoon {hi} other {lo}");
}

#[test]
fn perfect_predictor_has_zero_regret() {
    let split = small_split(120, 9, 0.0);
    let params: PredictorParams = init_linear(&split.train, fit_standardizer(&split.train).unwrap()).unwrap();
    let ess = EssParams::default();
    let r: MetricsReport = evaluate_model(&params, &split.test, &ess, 0.5, Execution::Sequential).unwrap();
    assert!(r.mean_daily_regret.abs() < 1e-6);
    let oracle_mean: f64 = split
        .test
        .iter()
        .map(|d| dfp_core::arbitrage::optimal_benefit(&d.price, &ess).unwrap())
        .sum::<f64>()
        / split.test.len() as f64;
    assert!((r.mean_oracle_benefit - 0.5 * oracle_mean).abs() < 1e-9);
    assert!((r.mean_daily_regret - (r.mean_oracle_benefit - r.mean_daily_benefit)).abs() <= 1e-9);
}

#[test]
fn regret_only_history_settles() {
    let split = small_split(120, 10, 0.3);
    let init = init_linear(&split.train, fit_standardizer(&split.train).unwrap()).unwrap();
    let cfg = TrainConfig {
        epochs: 40,
        learning_rate: 1e-3,
        mode: TrainMode::RegretOnly,
        loss: LossConfig {
            epsilon: 1e6,
            ..LossConfig::default()
        },
        early_stop_patience: 40,
        ..fast_cfg()
    };
    let (_, h) = train_model(&split, init, &cfg, &EssParams::default()).unwrap();
    let tail: Vec<f64> = h.records[h.records.len() - 10..].iter().map(|r| r.val_regret).collect();
    for w in tail.windows(2) {
        assert!(w[1] <= w[0] * 1.05, "{tail:?}");
    }
}
