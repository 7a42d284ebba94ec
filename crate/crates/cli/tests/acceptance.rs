//! Acceptance suite. Each test prints one `PASS` or `FAIL` line naming its
//! criterion, then asserts it.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use dfp_core::arbitrage::{benefit_of, brute_force_arbitrage, optimal_benefit, optimal_decision, solve_arbitrage};
use dfp_core::data::{
    build_day_samples, fit_standardizer, generate_synthetic, FeatureBlock, FeatureLayout, NoiseProfile, SynthConfig,
};
use dfp_core::ess::{validate_schedule, EssParams, PriceCurve};
use dfp_core::exec::{try_map_indexed, Execution};
use dfp_core::losses::{hybrid_grad, hybrid_loss, mse, mse_grad, regret, Convention, LossConfig, Oracle, OutputSpace};
use dfp_core::metrics::{variance, MetricsReport};
use dfp_core::predictor::{
    backward, forward, init_linear, init_resnet, Activation, Mode, PredictorParams, ResnetConfig,
};
use dfp_core::training::{evaluate_model, split_dataset, train_model, TrainConfig, TrainMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

fn report(name: &str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name} failed: {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn lognormal_curve(rng: &mut ChaCha8Rng, t: usize) -> PriceCurve {
    let d = LogNormal::new(40f64.ln(), 0.35).unwrap();
    PriceCurve::new((0..t).map(|_| d.sample(rng)).collect()).unwrap()
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

#[test]
fn solver_exactness() {
    let start = Instant::now();
    let mut r = rng(101);
    let instances: Vec<PriceCurve> = (0..200)
        .map(|i| {
            let t = 2 + i % 3;
            PriceCurve::new((0..t).map(|_| r.gen_range(-50.0..150.0)).collect()).unwrap()
        })
        .collect();
    let failures = try_map_indexed(Execution::Parallel, &instances, |_, price| {
        let p = EssParams::default().with_periods(price.len());
        let exact = solve_arbitrage(price, &p)?;
        let grid = brute_force_arbitrage(price, &p, 0.01)?;
        let feasible = validate_schedule(&exact.schedule, &p, 1e-7)?.is_empty();
        let ok = exact.objective >= grid.objective - 1e-9 && exact.objective <= exact.lp_bound + 1e-7 && feasible;
        Ok::<_, dfp_core::Error>(usize::from(!ok))
    })
    .unwrap()
    .into_iter()
    .sum::<usize>();
    let elapsed = start.elapsed();
    report(
        "solver exactness",
        failures == 0 && elapsed < Duration::from_secs(60),
        format!(
            "{failures}/200 instances violate the grid/LP sandwich or feasibility, {}",
            secs(elapsed)
        ),
    );
}

#[test]
fn analytic_fixtures() {
    let p = EssParams::default().with_periods(2);
    let up = solve_arbitrage(&PriceCurve::new(vec![20.0, 100.0]).unwrap(), &p).unwrap();
    let down = solve_arbitrage(&PriceCurve::new(vec![100.0, 20.0]).unwrap(), &p).unwrap();
    let pass = (up.objective - 44.589372).abs() <= 1e-6
        && (up.schedule.p_ch[0] - 0.2705314).abs() <= 1e-6
        && (down.objective - 27.6).abs() <= 1e-6;
    report(
        "analytic fixtures",
        pass,
        format!(
            "[20,100] objective {:.7} p_ch1 {:.7}; [100,20] objective {:.7}",
            up.objective, up.schedule.p_ch[0], down.objective
        ),
    );
}

#[test]
fn surrogate_bound_and_convexity() {
    let start = Instant::now();
    let p = EssParams::default();
    let mut r = rng(103);
    let pairs: Vec<(PriceCurve, PriceCurve, PriceCurve)> = (0..500)
        .map(|_| {
            (
                lognormal_curve(&mut r, 24),
                lognormal_curve(&mut r, 24),
                lognormal_curve(&mut r, 24),
            )
        })
        .collect();
    // per pair: regret gap, midpoint-convexity slack, subgradient slack
    let slacks = try_map_indexed(Execution::Parallel, &pairs, |_, (truth, a, b)| {
        let oracle = Oracle::new(truth, &p)?;
        let l = |c: &PriceCurve| oracle.surrogate(c, &p, Convention::Paper);
        let (la, ga) = l(a)?;
        let (lb, _) = l(b)?;
        let mid = PriceCurve::new(a.values().iter().zip(b.values()).map(|(x, y)| 0.5 * (x + y)).collect())?;
        let (lm, _) = l(&mid)?;
        let lin: f64 = ga
            .iter()
            .zip(b.values().iter().zip(a.values()))
            .map(|(g, (y, x))| g * (y - x))
            .sum();
        let bound = la - oracle.regret(a, &p)?;
        Ok::<_, dfp_core::Error>((bound, 0.5 * (la + lb) - lm, lb - la - lin))
    })
    .unwrap();
    let min = |f: fn(&(f64, f64, f64)) -> f64| slacks.iter().map(f).fold(f64::INFINITY, f64::min);
    let (bound, mid, sub) = (min(|s| s.0), min(|s| s.1), min(|s| s.2));
    let elapsed = start.elapsed();
    report(
        "surrogate upper bound and convexity",
        bound >= -1e-9 && mid >= -1e-6 && sub >= -1e-6 && elapsed < Duration::from_secs(600),
        format!(
            "500 pairs, min slack: bound {bound:.3e}, midpoint {mid:.3e}, subgradient {sub:.3e}, {}",
            secs(elapsed)
        ),
    );
}

fn backward_gap(params: &PredictorParams, x: &[f64], g: &[f64], seed: u64) -> f64 {
    let (_, trace) = forward(params, x, Mode::Train, seed).unwrap();
    let analytic = backward(params, &trace.unwrap(), g).unwrap();
    let f = |p: &PredictorParams| -> f64 {
        let (out, _) = forward(p, x, Mode::Train, seed).unwrap();
        out.iter().zip(g).map(|(a, b)| a * b).sum()
    };
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let flat = params.to_flat();
    let mut probe = params.clone();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..flat.len() {
        let mut v = flat.clone();
        v[i] = flat[i] + h;
        probe.set_flat(&v).unwrap();
        let up = f(&probe);
        v[i] = flat[i] - h;
        probe.set_flat(&v).unwrap();
        let fd = (up - f(&probe)) / (2.0 * h);
        worst = worst.max((fd - analytic[i]).abs() / scale);
    }
    worst
}

fn random_days(r: &mut ChaCha8Rng, dim: usize, t: usize) -> Vec<dfp_core::ess::DaySample> {
    let d0 = dfp_core::data::parse_timestamp("2022-01-01T00:00").unwrap().date();
    (0..12)
        .map(|i| {
            let x: Vec<f64> = (0..dim).map(|_| r.gen_range(-2.0..2.0)).collect();
            let price = (0..t)
                .map(|h| (3.5 + 0.2 * x[h % dim] + r.gen_range(-0.1..0.1)).exp())
                .collect();
            let date = (0..i).fold(d0, |d, _| d.succ_opt().unwrap());
            dfp_core::ess::DaySample::new(date, x, PriceCurve::new(price).unwrap()).unwrap()
        })
        .collect()
}

#[test]
fn gradient_checks() {
    let mut r = rng(104);

    // squared error, normwise relative
    let mut mse_gap = 0.0f64;
    for _ in 0..20 {
        let t = r.gen_range(1..30);
        let a: Vec<f64> = (0..t).map(|_| r.gen_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..t).map(|_| r.gen_range(-3.0..3.0)).collect();
        let g = mse_grad(&a, &b).unwrap();
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for i in 0..t {
            let (mut u, mut d) = (a.clone(), a.clone());
            u[i] += 1e-5;
            d[i] -= 1e-5;
            let fd = (mse(&u, &b).unwrap() - mse(&d, &b).unwrap()) / 2e-5;
            mse_gap = mse_gap.max((fd - g[i]).abs() / scale);
        }
    }

    // back-propagation on both predictor kinds
    let mut bp_gap = 0.0f64;
    let mut configs = 0;
    for case in 0..24u64 {
        let dim = r.gen_range(2..7);
        let t = r.gen_range(1..5);
        let days = random_days(&mut r, dim, t);
        let st = fit_standardizer(&days).unwrap();
        let mut params = if case % 3 == 0 {
            init_linear(&days, st).unwrap()
        } else {
            let cfg = ResnetConfig {
                hidden_widths: (0..r.gen_range(1..4)).map(|_| r.gen_range(2..6)).collect(),
                activation: if case % 2 == 0 {
                    Activation::Relu
                } else {
                    Activation::Tanh
                },
                dropout_rate: if case % 4 == 1 { 0.3 } else { 0.0 },
                frozen_skips: false,
            };
            init_resnet(&days, st, &cfg, case).unwrap()
        };
        let flat: Vec<f64> = params.to_flat().iter().map(|v| v + r.gen_range(-0.3..0.3)).collect();
        params.set_flat(&flat).unwrap();
        let x: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.5..1.5)).collect();
        let g: Vec<f64> = (0..t).map(|_| r.gen_range(-1.0..1.0)).collect();
        bp_gap = bp_gap.max(backward_gap(&params, &x, &g, case));
        configs += 1;
    }

    // hybrid loss through the log output, at verified-unique argmax points
    let p = EssParams::default();
    let cfg = LossConfig::default();
    let mut hy_gap = 0.0f64;
    let mut points = 0;
    for _ in 0..40 {
        let truth = lognormal_curve(&mut r, 24);
        let y: Vec<f64> = lognormal_curve(&mut r, 24).values().iter().map(|v| v.ln()).collect();
        let inner = |y: &[f64]| {
            let pred = PriceCurve::new(y.iter().map(|v| v.exp()).collect()).unwrap();
            optimal_decision(&truth.minus_twice(&pred).unwrap(), &p)
                .unwrap()
                .schedule
                .p_net
        };
        let base = inner(&y);
        let unique = (0..24).all(|i| {
            [1e-4, -1e-4].iter().all(|d| {
                let mut z = y.clone();
                z[i] += d;
                inner(&z).iter().zip(&base).all(|(a, b)| (a - b).abs() < 1e-12)
            })
        });
        if !unique {
            continue;
        }
        points += 1;
        let f = |y: &[f64]| {
            let pred = PriceCurve::new(y.iter().map(|v| v.exp()).collect()).unwrap();
            hybrid_loss(&pred, &truth, &p, &cfg).unwrap()
        };
        let g = hybrid_grad(&y, OutputSpace::Log, &truth, &p, &cfg).unwrap();
        for i in 0..24 {
            let (mut u, mut d) = (y.clone(), y.clone());
            u[i] += 1e-6;
            d[i] -= 1e-6;
            hy_gap = hy_gap.max(((f(&u) - f(&d)) / 2e-6 - g.total[i]).abs());
        }
    }

    report(
        "gradient checks",
        mse_gap <= 1e-8 && bp_gap <= 1e-5 && configs >= 20 && hy_gap <= 1e-5 && points >= 10,
        format!(
            "squared error rel {mse_gap:.2e}; backward rel {bp_gap:.2e} over {configs} configs; hybrid abs {hy_gap:.2e} at {points} points"
        ),
    );
}

#[test]
fn scale_invariance() {
    let p = EssParams::default();
    let mut r = rng(105);
    let (mut worst_benefit, mut worst_regret) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let curve = PriceCurve::new((0..24).map(|_| r.gen_range(-50.0..150.0)).collect()).unwrap();
        let best = optimal_benefit(&curve, &p).unwrap();
        for alpha in [0.5, 2.0, 10.0] {
            let scaled = curve.scaled(alpha).unwrap();
            let s = solve_arbitrage(&scaled, &p).unwrap();
            worst_benefit = worst_benefit.max((benefit_of(&s.schedule, &curve, &p).unwrap() - best).abs());
            worst_regret = worst_regret.max(regret(&scaled, &curve, &p).unwrap());
        }
    }
    report(
        "argmax scale invariance",
        worst_benefit <= 1e-7 && worst_regret <= 1e-9,
        format!("50 curves x 3 scales, worst benefit gap {worst_benefit:.2e}, worst regret {worst_regret:.2e}"),
    );
}

const STUDY_SEEDS: [u64; 6] = [1, 2, 3, 4, 5, 6];
const STUDY_NOISE: f64 = 0.3;

/// Test-set metrics of one training run.
#[derive(Debug, Clone, Copy)]
struct RunMetrics {
    rmse: f64,
    regret: f64,
    hour_variance: f64,
}

/// Per seed: mse-only, then hybrid at epsilon 0, 25 and 100.
struct Study {
    runs: Vec<[RunMetrics; 4]>,
    elapsed: Duration,
}

fn study() -> &'static Study {
    static STUDY: OnceLock<Study> = OnceLock::new();
    STUDY.get_or_init(|| {
        let start = Instant::now();
        let layout = FeatureLayout {
            blocks: vec![
                FeatureBlock::Temperature,
                FeatureBlock::TemperatureSq,
                FeatureBlock::IsWeekend,
            ],
        };
        let ess = EssParams::default();
        let runs = STUDY_SEEDS
            .iter()
            .map(|&seed| {
                let syn = generate_synthetic(&SynthConfig {
                    days: 365,
                    seed,
                    profile: NoiseProfile::AfternoonHeavy,
                    noise_std: STUDY_NOISE,
                    ..SynthConfig::default()
                })
                .unwrap();
                let days = build_day_samples(&syn.series, &layout, &Default::default()).unwrap();
                let split = split_dataset(&days, seed).unwrap();
                let init = init_linear(&split.train, fit_standardizer(&split.train).unwrap()).unwrap();
                let run = |mode, epsilon| {
                    let cfg = TrainConfig {
                        epochs: 100,
                        learning_rate: 1e-2,
                        mode,
                        seed,
                        loss: LossConfig {
                            epsilon,
                            ..LossConfig::default()
                        },
                        ..TrainConfig::default()
                    };
                    let (params, _) = train_model(&split, init.clone(), &cfg, &ess).unwrap();
                    let r = evaluate_model(&params, &split.test, &ess, 1.0, Execution::Parallel).unwrap();
                    assert!(identity_holds(&r));
                    RunMetrics {
                        rmse: r.rmse_log,
                        regret: r.mean_daily_regret,
                        hour_variance: variance(&r.per_hour_rmse),
                    }
                };
                [
                    run(TrainMode::MseOnly, 25.0),
                    run(TrainMode::Hybrid, 0.0),
                    run(TrainMode::Hybrid, 25.0),
                    run(TrainMode::Hybrid, 100.0),
                ]
            })
            .collect();
        Study {
            runs,
            elapsed: start.elapsed(),
        }
    })
}

fn mean_of(s: &Study, which: usize, f: fn(&RunMetrics) -> f64) -> f64 {
    s.runs.iter().map(|r| f(&r[which])).sum::<f64>() / s.runs.len() as f64
}

fn identity_holds(r: &MetricsReport) -> bool {
    (r.mean_daily_regret - (r.mean_oracle_benefit - r.mean_daily_benefit)).abs() <= 1e-9
}

#[test]
fn hybrid_beats_squared_error_on_decisions() {
    let s = study();
    let (mse_only, hybrid) = (0, 2);
    let regret = (mean_of(s, mse_only, |m| m.regret), mean_of(s, hybrid, |m| m.regret));
    let rmse = (mean_of(s, mse_only, |m| m.rmse), mean_of(s, hybrid, |m| m.rmse));
    let var = (
        mean_of(s, mse_only, |m| m.hour_variance),
        mean_of(s, hybrid, |m| m.hour_variance),
    );
    let seed_wins = s
        .runs
        .iter()
        .filter(|r| r[hybrid].regret < r[mse_only].regret && r[mse_only].rmse <= r[hybrid].rmse)
        .count();
    report(
        "hybrid versus squared-error training",
        regret.1 < regret.0 && rmse.0 <= rmse.1 && var.1 < var.0 && s.elapsed < Duration::from_secs(600),
        format!(
            "mean over {} seeds: regret {:.3} vs {:.3}, rmse {:.4} vs {:.4}, per-hour rmse variance {:.4} vs {:.4} \
             (hybrid vs mse-only); {seed_wins} seeds win individually; study {}",
            s.runs.len(),
            regret.1,
            regret.0,
            rmse.1,
            rmse.0,
            var.1,
            var.0,
            secs(s.elapsed)
        ),
    );
}

#[test]
fn epsilon_sweep_trend() {
    let s = study();
    let rmse: Vec<f64> = (1..4).map(|k| mean_of(s, k, |m| m.rmse)).collect();
    let regret: Vec<f64> = (1..4).map(|k| mean_of(s, k, |m| m.regret)).collect();
    let monotone = rmse[1] <= 1.05 * rmse[0] && rmse[2] <= 1.05 * rmse[1];
    let interior = regret[1] <= 1.1 * regret[0];
    report(
        "epsilon sweep trend",
        monotone && interior,
        format!(
            "mean rmse at epsilon 0/25/100: {:.4}/{:.4}/{:.4}; regret {:.3}/{:.3}/{:.3}",
            rmse[0], rmse[1], rmse[2], regret[0], regret[1], regret[2]
        ),
    );
}

fn run_pipeline(dir: &Path) -> Vec<Vec<u8>> {
    let config = r#"{"train": {"epochs": 6, "learning_rate": 0.01, "seed": 4}, "data": {"split_seed": 4}}"#;
    std::fs::write(dir.join("config.json"), config).unwrap();
    let steps: [&[&str]; 3] = [
        &[
            "synth",
            "--days",
            "200",
            "--seed",
            "4",
            "--profile",
            "afternoon-heavy",
            "--out",
            "data.csv",
        ],
        &[
            "train",
            "--data",
            "data.csv",
            "--config",
            "config.json",
            "--out-checkpoint",
            "ck.json",
            "--out-history",
            "history.csv",
        ],
        &[
            "evaluate",
            "--data",
            "data.csv",
            "--config",
            "config.json",
            "--checkpoint",
            "ck.json",
            "--out-report",
            "report.json",
        ],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_dfp"))
            .args(args)
            .current_dir(dir)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    ["history.csv", "ck.json", "report.json", "report.per_hour.csv"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).unwrap())
        .collect()
}

#[test]
fn pipeline_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_pipeline(a.path());
    let second = run_pipeline(b.path());
    let same = first.iter().zip(&second).filter(|(x, y)| x == y).count();
    report(
        "pipeline determinism",
        same == first.len(),
        format!("{same}/{} artifacts byte-identical across two runs", first.len()),
    );
}

#[test]
fn report_identity() {
    let dir = tempfile::tempdir().unwrap();
    let files = run_pipeline(dir.path());
    let report_json: MetricsReport = serde_json::from_slice(&files[2]).unwrap();
    let s = study();
    let study_ok = s.runs.len() == STUDY_SEEDS.len();
    let gap = report_json.mean_daily_regret - (report_json.mean_oracle_benefit - report_json.mean_daily_benefit);
    report(
        "report identity",
        identity_holds(&report_json) && study_ok,
        format!("cli report gap {gap:.2e}; every study evaluation asserted within 1e-9"),
    );
}
