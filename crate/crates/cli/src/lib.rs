//! `dfp` command-line pipeline: synthesize data, train, evaluate, solve.

pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use dfp_core::arbitrage::solve_arbitrage;
use dfp_core::canonical;
use dfp_core::data::{
    build_day_samples, clean_series, fit_standardizer, generate_synthetic, load_hourly_csv, read_holidays,
    save_hourly_csv, NoiseProfile, SynthConfig,
};
use dfp_core::error::{read_text, write_text};
use dfp_core::ess::{DaySample, EssParams, PriceCurve};
use dfp_core::predictor::{self, init_linear, init_resnet, PredictorKind};
use dfp_core::training::{evaluate_model, split_dataset, train_model};
use dfp_core::Error;

use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "dfp",
    version,
    about = "Decision-focused price prediction for storage arbitrage"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfileArg {
    Uniform,
    AfternoonHeavy,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Validation,
    Test,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic hourly CSV.
    Synth {
        #[arg(long)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "uniform")]
        profile: ProfileArg,
        /// Standard deviation of the log-price noise.
        #[arg(long, default_value_t = 0.1)]
        noise_std: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split, train and write a checkpoint plus per-epoch history.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        holidays: Option<PathBuf>,
        #[arg(long)]
        out_checkpoint: PathBuf,
        #[arg(long)]
        out_history: PathBuf,
    },
    /// Score a checkpoint and write a metrics report and per-hour CSV.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        holidays: Option<PathBuf>,
        /// Which part of the seeded split to score.
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out_report: PathBuf,
        /// Defaults to the report path with a `.per_hour.csv` extension.
        #[arg(long)]
        out_per_hour: Option<PathBuf>,
    },
    /// Solve the arbitrage problem for one price curve.
    Solve {
        /// JSON array, or numbers separated by commas or whitespace.
        #[arg(long)]
        prices: PathBuf,
        /// JSON storage parameters; the horizon follows the price curve.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Print the full outcome as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => match e.root() {
                Error::Solver { .. } | Error::Singular(_) | Error::Numerical(_) | Error::TooManyPeriods { .. } => {
                    EXIT_NUMERICAL
                }
                _ => EXIT_DATA,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth {
            days,
            seed,
            profile,
            noise_std,
            out,
        } => {
            let cfg = SynthConfig {
                days,
                seed,
                profile: match profile {
                    ProfileArg::Uniform => NoiseProfile::Uniform,
                    ProfileArg::AfternoonHeavy => NoiseProfile::AfternoonHeavy,
                },
                noise_std,
                ..SynthConfig::default()
            };
            let syn = generate_synthetic(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
            save_hourly_csv(&syn.series, &out)?;
            Ok(())
        }
        Command::Train {
            data,
            config,
            holidays,
            out_checkpoint,
            out_history,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let days = load_days(&data, &cfg, &cfg.layout, holidays.as_deref())?;
            let split = split_dataset(&days, cfg.data.split_seed)?;
            let standardizer = fit_standardizer(&split.train)?;
            let mut init = match cfg.predictor.kind {
                PredictorKind::Linear => init_linear(&split.train, standardizer)?,
                PredictorKind::Resnet => init_resnet(
                    &split.train,
                    standardizer,
                    &cfg.predictor.resnet,
                    cfg.predictor.init_seed,
                )?,
            };
            init.layout = Some(cfg.layout.clone());
            let (params, history) = train_model(&split, init, &cfg.train, &cfg.ess)?;
            predictor::save_checkpoint(&params, &out_checkpoint)?;
            write_text(&out_history, history.to_csv())?;
            Ok(())
        }
        Command::Evaluate {
            data,
            checkpoint,
            config,
            holidays,
            split,
            out_report,
            out_per_hour,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let params = predictor::load_checkpoint(&checkpoint)?;
            let layout = params.layout.clone().unwrap_or_else(|| cfg.layout.clone());
            let days = load_days(&data, &cfg, &layout, holidays.as_deref())?;
            let chosen = match split {
                SplitArg::All => days,
                part => {
                    let s = split_dataset(&days, cfg.data.split_seed)?;
                    match part {
                        SplitArg::Train => s.train,
                        SplitArg::Validation => s.validation,
                        _ => s.test,
                    }
                }
            };
            let report = evaluate_model(&params, &chosen, &cfg.ess, cfg.capacity_mwh, cfg.train.execution)?;
            write_text(&out_report, canonical::to_string(&report)?)?;
            let per_hour = out_per_hour.unwrap_or_else(|| out_report.with_extension("per_hour.csv"));
            write_text(per_hour, report.per_hour_csv())?;
            Ok(())
        }
        Command::Solve { prices, params, json } => {
            let text = read_text(&prices)?;
            let curve = PriceCurve::new(parse_prices(&text)?)?;
            let ess = match params {
                Some(p) => {
                    let text = read_text(p)?;
                    let e: EssParams = serde_json::from_str(&text).map_err(Error::from)?;
                    e
                }
                None => EssParams::default(),
            }
            .with_periods(curve.len());
            let out = solve_arbitrage(&curve, &ess)?;
            if json {
                print!("{}", canonical::to_string(&out)?);
            } else {
                println!("objective {:.6}", out.objective);
                println!("lp_bound {:.6}", out.lp_bound);
                println!("t,price,p_ch,p_dis,p_net,energy");
                for t in 0..curve.len() {
                    println!(
                        "{},{},{:.7},{:.7},{:.7},{:.7}",
                        t + 1,
                        curve[t],
                        out.schedule.p_ch[t],
                        out.schedule.p_dis[t],
                        out.schedule.p_net[t],
                        out.schedule.energy[t]
                    );
                }
            }
            Ok(())
        }
    }
}

fn load_days(
    path: &Path,
    cfg: &RunConfig,
    layout: &dfp_core::data::FeatureLayout,
    holidays: Option<&Path>,
) -> CliResult<Vec<DaySample>> {
    let raw = load_hourly_csv(path)?;
    let clean = clean_series(&raw, cfg.data.max_gap)?;
    let hol = match holidays {
        Some(p) => read_holidays(p)?,
        None => Default::default(),
    };
    Ok(build_day_samples(&clean, layout, &hol)?)
}

fn parse_prices(text: &str) -> CliResult<Vec<f64>> {
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| CliError::Core(e.into()));
    }
    trimmed
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Core(Error::Data(format!("bad price value {s:?}"))))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn price_file_formats() {
        assert_eq!(parse_prices("[20, 100]").unwrap(), vec![20.0, 100.0]);
        assert_eq!(parse_prices("20,100\n").unwrap(), vec![20.0, 100.0]);
        assert_eq!(parse_prices("20\n100\n").unwrap(), vec![20.0, 100.0]);
        assert!(parse_prices("20,abc").is_err());
    }

    #[test]
    fn exit_code_follows_root_cause() {
        let nested = Error::Day {
            date: dfp_core::data::parse_timestamp("2021-01-01T00:00").unwrap().date(),
            source: Box::new(Error::Numerical("diverged".into())),
        };
        assert_eq!(CliError::Core(nested).exit_code(), EXIT_NUMERICAL);
        assert_eq!(CliError::Core(Error::Data("x".into())).exit_code(), EXIT_DATA);
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_USAGE);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(cli_main(["dfp", "frobnicate"]), EXIT_USAGE);
        assert_eq!(cli_main(["dfp", "synth", "--bogus"]), EXIT_USAGE);
        assert_eq!(cli_main(["dfp"]), EXIT_USAGE);
    }
}
