//! Command-line front end: simulate chaotic-system datasets, train and
//! benchmark forecasters, score forecast files, and run the recall and
//! ablation experiments.
//!
//! Exit codes: 0 on success, 2 for configuration and usage errors, 1 for
//! runtime failures.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use edmcast::harness::{self, AblationParam, ExperimentConfig, RecallGrid};
use edmcast::metrics::{self, ForecastCase, MaseScope};
use edmcast::{dynamics, DeepEdm, Error};

#[derive(Parser)]
#[command(
    name = "edmcast",
    version,
    about = "Chaotic-system forecasting: simulate, train, benchmark"
)]
struct Cli {
    /// Random seed; overrides the seed list of a config file.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Experiment configuration file (JSON).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory (falls back to $EDMCAST_OUT, then ./out).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Cap the worker thread pool.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the synthetic suite and write its dataset files.
    Simulate {
        /// Integration step size.
        #[arg(long, default_value_t = dynamics::DEFAULT_DT)]
        dt: f64,
        /// Steps per trajectory.
        #[arg(long, default_value_t = dynamics::DEFAULT_STEPS)]
        steps: usize,
    },
    /// Train one model per seed and benchmark it against the baselines.
    Train,
    /// Forecast from a saved checkpoint.
    Forecast {
        /// Directory a training run saved the model into.
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        /// Input series CSV; the lookback is its trailing window.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Forecast CSV to write (default: <out>/forecast.csv).
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Score a forecast CSV against a target CSV.
    Evaluate {
        /// True future values.
        #[arg(long, value_name = "FILE")]
        target: PathBuf,
        /// Forecast to score; same shape as the target.
        #[arg(long, value_name = "FILE")]
        forecast: PathBuf,
        /// History for the scaled-error metrics; the target itself when
        /// omitted.
        #[arg(long, value_name = "FILE")]
        insample: Option<PathBuf>,
        /// Seasonality period of the scaled-error metrics.
        #[arg(long, default_value_t = 1, value_name = "M")]
        mase_m: usize,
    },
    /// Run only the training-free baselines on a dataset.
    Baseline {
        /// Dataset CSV.
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Forecast length.
        #[arg(long, value_name = "H")]
        horizon: usize,
        /// Lookback length; twice the horizon when omitted.
        #[arg(long, value_name = "T")]
        t_lookback: Option<usize>,
        /// Embedding dimension of the simplex baseline.
        #[arg(long, default_value_t = 5, value_name = "E")]
        embed_dim: usize,
        /// Embedding stride of the simplex baseline.
        #[arg(long, default_value_t = 1, value_name = "TAU")]
        tau: usize,
    },
    /// Measure true-neighbor recall of delay and latent embeddings.
    Recall {
        /// Trained checkpoint whose latents are scored alongside.
        #[arg(long, value_name = "DIR")]
        checkpoint: Option<PathBuf>,
        /// Steps of the reference trajectory.
        #[arg(long, default_value_t = dynamics::DEFAULT_STEPS)]
        steps: usize,
        /// Integration step size.
        #[arg(long, default_value_t = dynamics::DEFAULT_DT)]
        dt: f64,
        /// Neighbor counts to score.
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,7", value_name = "K,..")]
        ks: Vec<usize>,
        /// Prediction offsets to score.
        #[arg(long, value_delimiter = ',', default_value = "1,5,10", value_name = "D,..")]
        delta_ts: Vec<usize>,
        /// Observation noise levels to score.
        #[arg(long, value_delimiter = ',', default_value = "0,2.5", value_name = "S,..")]
        sigmas: Vec<f64>,
    },
    /// Sweep one model hyperparameter and collect the metric rows.
    Ablate {
        /// Hyperparameter to sweep: delta_t, tau, or t_lookback.
        #[arg(long, value_parser = parse_param, value_name = "NAME")]
        param: AblationParam,
        /// Values to sweep over.
        #[arg(long, value_delimiter = ',', required = true, value_name = "V,..")]
        values: Vec<usize>,
    },
}

fn parse_param(s: &str) -> Result<AblationParam, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Clap exits 2 on usage errors and 0 for --help/--version.
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e
                .chain()
                .filter_map(|c| c.downcast_ref::<Error>())
                .any(Error::is_config);
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}

/// Scaled metrics are absent when a test window has no in-sample variation.
fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

/// The output directory: `--out`, then `$EDMCAST_OUT`, then `./out`.
fn out_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("EDMCAST_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Load `--config` and fold the global overrides into it.
fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let path = cli.config.as_ref().ok_or_else(|| {
        Error::InvalidConfig("this command needs --config <FILE>".into())
    })?;
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("sizing the thread pool")?;
    }
    match &cli.command {
        Command::Simulate { dt, steps } => {
            let dir = out_dir(&cli);
            let seed = cli.seed.unwrap_or(0);
            let datasets = dynamics::build_synthetic_suite(&dir, seed, *dt, *steps)?;
            println!("wrote {} datasets to {}", datasets.len(), dir.display());
            Ok(())
        }
        Command::Train => {
            let cfg = load_config(&cli)?;
            let out = harness::run_experiment(&cfg)?;
            for s in &out.summary {
                println!(
                    "{} p={} mse={:.6} mae={:.6} mase={}",
                    s.model,
                    s.p,
                    s.mse_mean,
                    s.mae_mean,
                    fmt_opt(s.mase_mean)
                );
            }
            println!("wrote {}", out.metrics_csv.display());
            println!("wrote {}", out.summary_csv.display());
            Ok(())
        }
        Command::Forecast { checkpoint, input, output } => {
            let model = DeepEdm::load(checkpoint)?;
            let series = harness::load_csv(input)?;
            let t = model.config().t_lookback;
            if series.len() < t {
                return Err(Error::SeriesTooShort {
                    what: "forecast lookback",
                    needed: t,
                    got: series.len(),
                }
                .into());
            }
            let lookback: Vec<Vec<f64>> = series
                .channels
                .iter()
                .map(|c| c[c.len() - t..].to_vec())
                .collect();
            let forecast = model.predict(&lookback)?;
            let path = match output {
                Some(p) => p.clone(),
                None => {
                    let dir = out_dir(&cli);
                    std::fs::create_dir_all(&dir)
                        .with_context(|| format!("creating {}", dir.display()))?;
                    dir.join("forecast.csv")
                }
            };
            harness::save_csv(&path, &harness::TimeSeries::new(series.names, forecast))?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Evaluate { target, forecast, insample, mase_m } => {
            let target = harness::load_csv(target)?;
            let forecast = harness::load_csv(forecast)?;
            if target.n_channels() != forecast.n_channels() || target.len() != forecast.len() {
                return Err(Error::InvalidConfig(format!(
                    "target is {}x{} but forecast is {}x{}",
                    target.n_channels(),
                    target.len(),
                    forecast.n_channels(),
                    forecast.len()
                ))
                .into());
            }
            let insample = match insample {
                Some(p) => {
                    let s = harness::load_csv(p)?;
                    if s.n_channels() != target.n_channels() {
                        return Err(Error::InvalidConfig(format!(
                            "insample has {} channels, target has {}",
                            s.n_channels(),
                            target.n_channels()
                        ))
                        .into());
                    }
                    s
                }
                None => target.clone(),
            };
            let mut refs = Vec::new();
            for c in &insample.channels {
                refs.push(metrics::naive2_forecast(c, target.len(), *mase_m)?);
            }
            let cases: Vec<ForecastCase> = (0..target.n_channels())
                .map(|d| ForecastCase {
                    target: &target.channels[d],
                    forecast: &forecast.channels[d],
                    insample: &insample.channels[d],
                })
                .collect();
            let report =
                metrics::report(&cases, *mase_m, MaseScope::InsampleAndTarget, Some(&refs))?;
            println!("mse,mae,smape,mape,mase,owa");
            println!(
                "{},{},{},{},{},{}",
                report.mse,
                report.mae,
                report.smape,
                report.mape,
                report.mase,
                report.owa.map(|v| v.to_string()).unwrap_or_default()
            );
            Ok(())
        }
        Command::Baseline { data, horizon, t_lookback, embed_dim, tau } => {
            let mut cfg = ExperimentConfig::new(data.clone(), out_dir(&cli), *horizon);
            cfg.t_lookback = *t_lookback;
            let t = t_lookback.unwrap_or(2 * horizon);
            let mut model = edmcast::ModelConfig::new(t, *horizon);
            model.delta_t = *embed_dim;
            model.tau = *tau;
            model.latent_dim = model.latent_dim.max(*embed_dim);
            cfg.model = Some(model);
            let out = harness::run_baselines(&cfg)?;
            for r in &out.rows {
                println!(
                    "{} p={} mse={:.6} mase={}",
                    r.model,
                    r.p,
                    r.mse,
                    fmt_opt(r.mase)
                );
            }
            println!("wrote {}", out.csv.display());
            Ok(())
        }
        Command::Recall { checkpoint, steps, dt, ks, delta_ts, sigmas } => {
            let model = match checkpoint {
                Some(dir) => Some(DeepEdm::load(dir)?),
                None => None,
            };
            let grid = RecallGrid {
                dt: *dt,
                n_steps: *steps,
                ks: ks.clone(),
                delta_ts: delta_ts.clone(),
                sigmas: sigmas.clone(),
                ..RecallGrid::new(cli.seed.unwrap_or(0))
            };
            let rows = harness::run_recall(&grid, model.as_ref())?;
            for r in &rows {
                println!(
                    "K={} delta_t={} sigma={} {} recall={:.4}",
                    r.k, r.delta_t, r.sigma_noise, r.source, r.recall
                );
            }
            let dir = out_dir(&cli);
            std::fs::create_dir_all(&dir)
                .with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join("recall.csv");
            harness::save_recall_csv(&path, &rows)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Ablate { param, values } => {
            let cfg = load_config(&cli)?;
            let out = harness::run_ablation(&cfg, *param, values)?;
            for r in &out.rows {
                println!(
                    "{}={} p={} seed={} mse={:.6} mase={}",
                    r.param, r.value, r.p, r.seed, r.mse, fmt_opt(r.mase)
                );
            }
            println!("wrote {}", out.csv.display());
            Ok(())
        }
    }
}
