//! Experiment orchestration: dataset I/O, temporal and cross-channel
//! splits, train-and-evaluate runs over seeds, the neighbor-recall
//! experiment, and hyperparameter sweeps. Every run leaves a config echo
//! and schema-stable CSV files in its output directory.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics;
use crate::edm::{self, NeighborSource, RecallConfig, SimplexConfig};
use crate::error::Error;
use crate::ioutil::atomic_write;
use crate::metrics::{self, ForecastCase, MaseScope};
use crate::model::{DeepEdm, ModelConfig};
use crate::train::{self, make_windows, LossConfig, TrainConfig, Window};
use crate::Result;

/// Wrap an error with the name of the run stage it occurred in.
fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage { stage: name, source: Box::new(e) })
}

// ---- series I/O -------------------------------------------------------------

/// A named multichannel series, `[D][L]` with one name per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub names: Vec<String>,
    pub channels: Vec<Vec<f64>>,
}

impl TimeSeries {
    /// # Panics
    /// Panics if names and channels disagree in count or channel lengths
    /// differ — construction is programmer-controlled.
    pub fn new(names: Vec<String>, channels: Vec<Vec<f64>>) -> Self {
        assert_eq!(names.len(), channels.len(), "one name per channel");
        if let Some(first) = channels.first() {
            assert!(
                channels.iter().all(|c| c.len() == first.len()),
                "channels must share one length"
            );
        }
        TimeSeries { names, channels }
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// The same channels restricted to `range` of the time axis.
    pub fn time_slice(&self, range: std::ops::Range<usize>) -> TimeSeries {
        TimeSeries {
            names: self.names.clone(),
            channels: self.channels.iter().map(|c| c[range.clone()].to_vec()).collect(),
        }
    }
}

fn header_is_time(name: &str) -> bool {
    let n = name.trim();
    n.eq_ignore_ascii_case("t") || n.eq_ignore_ascii_case("time") || n.eq_ignore_ascii_case("timestamp")
}

/// Read a headered CSV of numeric columns into a [`TimeSeries`].
///
/// A leading `t`/`time`/`timestamp` column (the form the dataset generator
/// writes) is dropped. Non-numeric or non-finite cells are rejected with
/// their line number and column name.
pub fn load_csv(path: &Path) -> Result<TimeSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))?;
    let mut names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let drop_first = names.first().map(|n| header_is_time(n)).unwrap_or(false);
    if drop_first {
        names.remove(0);
    }
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(parse_err(1, format!("malformed header: {header:?}")));
    }
    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (i, row) in lines.enumerate() {
        let line = i + 2;
        if row.trim().is_empty() {
            continue;
        }
        let mut fields = row.split(',');
        if drop_first {
            fields.next();
        }
        let mut count = 0;
        for (c, field) in fields.enumerate() {
            if c >= names.len() {
                count = c + 1;
                continue;
            }
            let v: f64 = field.trim().parse().map_err(|e| {
                parse_err(line, format!("column '{}': {e} (value {field:?})", names[c]))
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    line,
                    format!("column '{}': non-finite value {v} at data row {}", names[c], i + 1),
                ));
            }
            channels[c].push(v);
            count = c + 1;
        }
        if count != names.len() {
            return Err(parse_err(
                line,
                format!("expected {} data fields, found {count}", names.len()),
            ));
        }
    }
    if channels[0].is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    Ok(TimeSeries { names, channels })
}

/// Write a [`TimeSeries`] as headered CSV, one row per time step, numbers
/// in shortest round-trip form. The write is atomic.
pub fn save_csv(path: &Path, series: &TimeSeries) -> Result<()> {
    let mut out = String::with_capacity(series.len() * series.n_channels() * 16);
    out.push_str(&series.names.join(","));
    out.push('\n');
    for t in 0..series.len() {
        for (d, channel) in series.channels.iter().enumerate() {
            if d > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", channel[t]));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Split channels into disjoint train and test subsets, preserving names
/// and the full time axis.
pub fn channel_split(
    series: &TimeSeries,
    train_idx: &[usize],
    test_idx: &[usize],
) -> Result<(TimeSeries, TimeSeries)> {
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::InvalidConfig("channel split needs channels on both sides".into()));
    }
    if let Some(overlap) = train_idx.iter().find(|i| test_idx.contains(i)) {
        return Err(Error::InvalidConfig(format!(
            "channel {overlap} appears in both the train and test split"
        )));
    }
    let pick = |idxs: &[usize]| -> Result<TimeSeries> {
        let mut names = Vec::with_capacity(idxs.len());
        let mut channels = Vec::with_capacity(idxs.len());
        for &i in idxs {
            if i >= series.n_channels() {
                return Err(Error::InvalidConfig(format!(
                    "channel index {i} out of range for {} channels",
                    series.n_channels()
                )));
            }
            names.push(series.names[i].clone());
            channels.push(series.channels[i].clone());
        }
        Ok(TimeSeries { names, channels })
    };
    Ok((pick(train_idx)?, pick(test_idx)?))
}

// ---- experiment configuration ----------------------------------------------

/// How the dataset is partitioned for training and testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Sequential fractions of the time axis, all channels everywhere.
    Temporal { train: f64, val: f64, test: f64 },
    /// Disjoint channel sets: the model trains on `train_channels` over the
    /// temporal training range and is tested on `test_channels` over the
    /// temporal test range (standard fractions).
    Channel { train_channels: Vec<usize>, test_channels: Vec<usize> },
}

/// The standard sequential fractions.
pub const TEMPORAL_FRACTIONS: (f64, f64, f64) = (0.7, 0.1, 0.2);

impl Default for SplitSpec {
    fn default() -> Self {
        let (train, val, test) = TEMPORAL_FRACTIONS;
        SplitSpec::Temporal { train, val, test }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            SplitSpec::Temporal { train, val, test } => {
                if !(train > &0.0 && val > &0.0 && test > &0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "temporal fractions must all be positive, got {train}/{val}/{test}"
                    )));
                }
                if ((train + val + test) - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidConfig(format!(
                        "temporal fractions must sum to 1, got {}",
                        train + val + test
                    )));
                }
            }
            SplitSpec::Channel { train_channels, test_channels } => {
                if train_channels.is_empty() || test_channels.is_empty() {
                    return Err(Error::InvalidConfig(
                        "channel split needs channels on both sides".into(),
                    ));
                }
                if let Some(i) = train_channels.iter().find(|i| test_channels.contains(i)) {
                    return Err(Error::InvalidConfig(format!(
                        "channel {i} appears in both the train and test split"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn default_prefixes() -> Vec<usize> {
    vec![1, 5, 15, 48]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_mase_m() -> usize {
    1
}

/// One full experiment: dataset, split, model and training settings, and
/// the evaluation grid. Omitted sections fall back to defaults derived
/// from `horizon` (in particular, the lookback defaults to twice the
/// horizon), and the resolved configuration is echoed to the output
/// directory on every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Input observations CSV.
    pub dataset: PathBuf,
    /// Directory all result files are written to.
    pub output_dir: PathBuf,
    /// Forecast length H.
    pub horizon: usize,
    /// Lookback length T; defaults to `2 * horizon`.
    #[serde(default)]
    pub t_lookback: Option<usize>,
    #[serde(default)]
    pub split: SplitSpec,
    /// Full model settings; defaults are sized from the window pair.
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub loss: Option<LossConfig>,
    /// Forecast prefixes to score; entries longer than the horizon are
    /// skipped.
    #[serde(default = "default_prefixes")]
    pub prefix_lengths: Vec<usize>,
    /// One training run per seed.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Seasonality period of the scaled-error metric.
    #[serde(default = "default_mase_m")]
    pub mase_m: usize,
}

impl ExperimentConfig {
    /// Minimal configuration; everything else defaults.
    pub fn new(dataset: impl Into<PathBuf>, output_dir: impl Into<PathBuf>, horizon: usize) -> Self {
        ExperimentConfig {
            dataset: dataset.into(),
            output_dir: output_dir.into(),
            horizon,
            t_lookback: None,
            split: SplitSpec::default(),
            model: None,
            train: None,
            loss: None,
            prefix_lengths: default_prefixes(),
            seeds: default_seeds(),
            mase_m: default_mase_m(),
        }
    }

    /// Parse a JSON config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    /// Fill in every default and check consistency.
    pub fn resolved(&self) -> Result<ResolvedExperiment> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be positive".into()));
        }
        self.split.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        let mut seen = self.seeds.to_vec();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::InvalidConfig("seeds must be distinct".into()));
        }
        if self.mase_m == 0 {
            return Err(Error::InvalidConfig("mase_m must be at least 1".into()));
        }
        let t = self.t_lookback.unwrap_or(2 * self.horizon);
        let model = match self.model {
            Some(m) => {
                if m.horizon != self.horizon {
                    return Err(Error::InvalidConfig(format!(
                        "model block horizon {} disagrees with the experiment horizon {}",
                        m.horizon, self.horizon
                    )));
                }
                if self.t_lookback.is_some() && m.t_lookback != t {
                    return Err(Error::InvalidConfig(format!(
                        "model block lookback {} disagrees with t_lookback {t}",
                        m.t_lookback
                    )));
                }
                m
            }
            None => ModelConfig::new(t, self.horizon),
        };
        model.validate()?;
        let train = self.train.unwrap_or_else(|| TrainConfig::new(0));
        train.validate()?;
        let loss = self.loss.unwrap_or_else(|| LossConfig::from_model(&model));
        loss.validate()?;
        let mut prefixes: Vec<usize> =
            self.prefix_lengths.iter().copied().filter(|&p| p >= 1 && p <= self.horizon).collect();
        prefixes.sort_unstable();
        prefixes.dedup();
        if prefixes.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "no usable prefix lengths: none of {:?} lies in 1..={}",
                self.prefix_lengths, self.horizon
            )));
        }
        let dataset_name = self
            .dataset
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| {
                Error::InvalidConfig(format!("dataset path {:?} has no file name", self.dataset))
            })?;
        Ok(ResolvedExperiment {
            dataset: self.dataset.clone(),
            dataset_name,
            output_dir: self.output_dir.clone(),
            split: self.split.clone(),
            model,
            train,
            loss,
            prefixes,
            seeds: self.seeds.clone(),
            mase_m: self.mase_m,
        })
    }
}

/// An [`ExperimentConfig`] with every default made explicit.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedExperiment {
    pub dataset: PathBuf,
    /// Dataset file stem, used in result rows.
    pub dataset_name: String,
    pub output_dir: PathBuf,
    pub split: SplitSpec,
    /// Per-run copies replace the seed.
    pub model: ModelConfig,
    /// Per-run copies replace the seed.
    pub train: TrainConfig,
    pub loss: LossConfig,
    /// Valid prefixes, ascending.
    pub prefixes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub mase_m: usize,
}

impl ResolvedExperiment {
    /// The fully explicit config, as echoed into the output directory.
    pub fn echo(&self) -> ExperimentConfig {
        ExperimentConfig {
            dataset: self.dataset.clone(),
            output_dir: self.output_dir.clone(),
            horizon: self.model.horizon,
            t_lookback: Some(self.model.t_lookback),
            split: self.split.clone(),
            model: Some(self.model),
            train: Some(self.train),
            loss: Some(self.loss),
            prefix_lengths: self.prefixes.clone(),
            seeds: self.seeds.clone(),
            mase_m: self.mase_m,
        }
    }
}

// ---- result rows ------------------------------------------------------------

/// One scored (model, prefix, seed) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub model: String,
    #[serde(rename = "H")]
    pub h: usize,
    pub p: usize,
    pub seed: u64,
    pub mse: f64,
    pub mae: f64,
    pub smape: f64,
    pub mape: f64,
    /// Empty when a window's history is constant at the seasonal period,
    /// which leaves the scaled error without a denominator.
    pub mase: Option<f64>,
    /// Empty when the reference forecast is perfect or mase is empty.
    pub owa: Option<f64>,
}

/// Mean and sample standard deviation over seeds for one (model, prefix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub model: String,
    #[serde(rename = "H")]
    pub h: usize,
    pub p: usize,
    pub n_seeds: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub smape_mean: f64,
    pub smape_std: f64,
    pub mape_mean: f64,
    pub mape_std: f64,
    pub mase_mean: Option<f64>,
    pub mase_std: Option<f64>,
    pub owa_mean: Option<f64>,
    pub owa_std: Option<f64>,
}

/// Artifacts of one seed's training run.
#[derive(Debug, Clone)]
pub struct SeedArtifacts {
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
    pub history_csv: PathBuf,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Everything a finished experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config_echo: PathBuf,
    pub metrics_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub rows: Vec<MetricRow>,
    pub summary: Vec<SummaryRow>,
    pub per_seed: Vec<SeedArtifacts>,
}

fn csv_bytes<S: Serialize>(rows: &[S]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::InvalidConfig(format!("CSV row: {e}")))?;
    }
    Ok(w.into_inner().expect("in-memory writer cannot fail"))
}

fn mean_and_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mu = crate::tensor::pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mu, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mu) * (x - mu)).collect();
    (mu, (crate::tensor::pairwise_sum(&sq) / (n - 1.0)).sqrt())
}

// ---- the experiment driver --------------------------------------------------

/// The three temporal segments of one experiment, plus what the simplex
/// baseline is allowed to see.
struct SplitData {
    train: Vec<Vec<f64>>,
    val: Vec<Vec<f64>>,
    test: Vec<Vec<f64>>,
    /// Full raw history of each test channel, from the start of the series.
    test_context: Vec<Vec<f64>>,
    /// Absolute index where the test segment starts.
    test_offset: usize,
}

fn split_series(series: &TimeSeries, spec: &SplitSpec) -> Result<SplitData> {
    let n = series.len();
    let (f_train, f_val) = match spec {
        SplitSpec::Temporal { train, val, .. } => (*train, *val),
        SplitSpec::Channel { .. } => (TEMPORAL_FRACTIONS.0, TEMPORAL_FRACTIONS.1),
    };
    let n_train = (n as f64 * f_train).floor() as usize;
    let n_val_end = (n as f64 * (f_train + f_val)).floor() as usize;
    if n_train == 0 || n_val_end <= n_train || n_val_end >= n {
        return Err(Error::SeriesTooShort {
            what: "temporal split",
            needed: 10,
            got: n,
        });
    }
    match spec {
        SplitSpec::Temporal { .. } => Ok(SplitData {
            train: series.time_slice(0..n_train).channels,
            val: series.time_slice(n_train..n_val_end).channels,
            test: series.time_slice(n_val_end..n).channels,
            test_context: series.channels.clone(),
            test_offset: n_val_end,
        }),
        SplitSpec::Channel { train_channels, test_channels } => {
            let (train_side, test_side) = channel_split(series, train_channels, test_channels)?;
            Ok(SplitData {
                train: train_side.time_slice(0..n_train).channels,
                val: train_side.time_slice(n_train..n_val_end).channels,
                test: test_side.time_slice(n_val_end..n).channels,
                test_context: test_side.channels,
                test_offset: n_val_end,
            })
        }
    }
}

/// Metrics of one (model, prefix) cell; the scaled entries are present only
/// when every window defines them.
struct PrefixScore {
    mse: f64,
    mae: f64,
    smape: f64,
    mape: f64,
    mase: Option<f64>,
    owa: Option<f64>,
}

/// Score `forecasts` against the first `p` steps of each window's target.
/// The scaled-error reference is the seasonally adjusted naive forecast.
///
/// A window whose history is constant at the seasonal period (the
/// equilibrium tail of a noise-free trajectory, for instance) has no
/// scaled-error denominator; when that happens the mase and owa cells are
/// left empty instead of failing the run, and the plain metrics are still
/// reported over every window.
fn score_prefix(
    windows: &[Window],
    forecasts: &[Vec<Vec<f64>>],
    p: usize,
    m: usize,
) -> Result<PrefixScore> {
    let mut cases = Vec::new();
    for (w, f) in windows.iter().zip(forecasts) {
        for (d, lb) in w.lookback.iter().enumerate() {
            cases.push(ForecastCase {
                target: &w.target[d][..p],
                forecast: &f[d][..p],
                insample: lb,
            });
        }
    }
    // A perfect forecast scores zero exactly when the denominator exists,
    // so it probes scalability without duplicating the formula.
    let scalable = cases.iter().all(|c| {
        metrics::mase(c.target, c.target, c.insample, m, MaseScope::InsampleAndTarget).is_ok()
    });
    if scalable {
        let mut refs = Vec::new();
        for w in windows {
            for lb in &w.lookback {
                refs.push(metrics::naive2_forecast(lb, p, m)?);
            }
        }
        let rep = metrics::report(&cases, m, MaseScope::InsampleAndTarget, Some(&refs))?;
        return Ok(PrefixScore {
            mse: rep.mse,
            mae: rep.mae,
            smape: rep.smape,
            mape: rep.mape,
            mase: Some(rep.mase),
            owa: rep.owa,
        });
    }
    let mut ys = Vec::new();
    let mut yhats = Vec::new();
    for c in &cases {
        ys.extend_from_slice(c.target);
        yhats.extend_from_slice(c.forecast);
    }
    Ok(PrefixScore {
        mse: metrics::mse(&ys, &yhats),
        mae: metrics::mae(&ys, &yhats),
        smape: metrics::smape(&ys, &yhats),
        mape: metrics::mape(&ys, &yhats),
        mase: None,
        owa: None,
    })
}

fn metric_row(
    rx: &ResolvedExperiment,
    model: &str,
    p: usize,
    seed: u64,
    score: &PrefixScore,
) -> MetricRow {
    MetricRow {
        dataset: rx.dataset_name.clone(),
        model: model.to_string(),
        h: rx.model.horizon,
        p,
        seed,
        mse: score.mse,
        mae: score.mae,
        smape: score.smape,
        mape: score.mape,
        mase: score.mase,
        owa: score.owa,
    }
}

/// Forecasts of the training-free reference models on the test windows.
struct BaselineForecasts {
    naive: Vec<Vec<Vec<f64>>>,
    simplex: Vec<Vec<Vec<f64>>>,
}

fn compute_baselines(
    rx: &ResolvedExperiment,
    split: &SplitData,
    test_windows: &[Window],
) -> Result<BaselineForecasts> {
    let (t, h) = (rx.model.t_lookback, rx.model.horizon);
    let naive: Vec<Vec<Vec<f64>>> = stage(
        "running the naive baseline",
        test_windows.iter().map(|w| metrics::naive_multivariate(&w.lookback, h)).collect(),
    )?;
    // The simplex baseline sees the full raw history up to each forecast
    // origin, not just the lookback window.
    let scfg = SimplexConfig::new(rx.model.delta_t, rx.model.tau, h);
    let simplex: Vec<Vec<Vec<f64>>> = stage(
        "running the simplex baseline",
        test_windows
            .par_iter()
            .enumerate()
            .map(|(i, _)| {
                let end = split.test_offset + i + t;
                let histories: Vec<Vec<f64>> =
                    split.test_context.iter().map(|c| c[..end].to_vec()).collect();
                edm::simplex_multivariate(&histories, &scfg, h)
            })
            .collect(),
    )?;
    Ok(BaselineForecasts { naive, simplex })
}

/// Score both baselines at every prefix, one row per seed (the scores are
/// seed-independent; replication keeps the table rectangular).
fn baseline_rows(
    rx: &ResolvedExperiment,
    test_windows: &[Window],
    baselines: &BaselineForecasts,
    seeds: &[u64],
) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for (name, forecasts) in [("simplex", &baselines.simplex), ("naive", &baselines.naive)] {
        for &p in &rx.prefixes {
            let rep = stage(
                "scoring the baselines",
                score_prefix(test_windows, forecasts, p, rx.mase_m),
            )?;
            for &seed in seeds {
                rows.push(metric_row(rx, name, p, seed, &rep));
            }
        }
    }
    Ok(rows)
}

/// What [`run_baselines`] writes.
#[derive(Debug, Clone)]
pub struct BaselineOutput {
    pub csv: PathBuf,
    pub rows: Vec<MetricRow>,
}

/// Score only the training-free baselines on a dataset's test split. Rows
/// carry seed 0, since nothing here depends on a seed.
pub fn run_baselines(cfg: &ExperimentConfig) -> Result<BaselineOutput> {
    let rx = stage("resolving the configuration", cfg.resolved())?;
    stage(
        "creating the output directory",
        std::fs::create_dir_all(&rx.output_dir).map_err(|e| Error::io(&rx.output_dir, e)),
    )?;
    let series = stage("loading the dataset", load_csv(&rx.dataset))?;
    let split = stage("splitting the dataset", split_series(&series, &rx.split))?;
    let test_windows = stage(
        "windowing the test split",
        make_windows(&split.test, rx.model.t_lookback, rx.model.horizon, 1),
    )?;
    let baselines = compute_baselines(&rx, &split, &test_windows)?;
    let rows = baseline_rows(&rx, &test_windows, &baselines, &[0])?;
    let csv = rx.output_dir.join("baseline_metrics.csv");
    let bytes = csv_bytes(&rows)?;
    stage("writing the metric table", atomic_write(&csv, &bytes))?;
    Ok(BaselineOutput { csv, rows })
}

/// Run one experiment end to end: load and split the dataset, train one
/// model per seed, evaluate the trained model plus the simplex and naive
/// baselines on every test window at each prefix length, and write the
/// config echo, per-seed training artifacts, the full metric table, and a
/// mean-over-seeds summary into the output directory. Deterministic: the
/// same configuration produces byte-identical CSV files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let rx = stage("resolving the configuration", cfg.resolved())?;
    stage(
        "creating the output directory",
        std::fs::create_dir_all(&rx.output_dir).map_err(|e| Error::io(&rx.output_dir, e)),
    )?;
    let series = stage("loading the dataset", load_csv(&rx.dataset))?;
    let split = stage("splitting the dataset", split_series(&series, &rx.split))?;
    let (t, h) = (rx.model.t_lookback, rx.model.horizon);
    let test_windows = stage("windowing the test split", make_windows(&split.test, t, h, 1))?;

    let config_echo = rx.output_dir.join("config.json");
    let mut echo = serde_json::to_vec_pretty(&rx.echo())
        .expect("config serializes");
    echo.push(b'\n');
    stage("writing the config echo", atomic_write(&config_echo, &echo))?;

    // Baselines are training-free: compute them once, reuse for every seed.
    let baselines = compute_baselines(&rx, &split, &test_windows)?;

    struct SeedRun {
        artifacts: SeedArtifacts,
        reports: Vec<(usize, PrefixScore)>,
    }
    let seed_runs: Vec<SeedRun> = rx
        .seeds
        .par_iter()
        .map(|&seed| -> Result<SeedRun> {
            let model_cfg = ModelConfig { seed, ..rx.model };
            let mut model = DeepEdm::new(model_cfg)?;
            let train_cfg = TrainConfig { seed, ..rx.train };
            let report = stage(
                "training",
                train::train(&mut model, &split.train, &split.val, &train_cfg, &rx.loss),
            )?;
            let checkpoint_dir = rx.output_dir.join(format!("checkpoint_seed{seed}"));
            stage("saving the checkpoint", model.save(&checkpoint_dir))?;
            let history_csv = rx.output_dir.join(format!("history_seed{seed}.csv"));
            stage("writing the history", train::save_history_csv(&history_csv, &report.history))?;

            let forecasts: Vec<Vec<Vec<f64>>> = stage(
                "forecasting the test split",
                test_windows.iter().map(|w| model.predict(&w.lookback)).collect(),
            )?;
            let mut reports = Vec::with_capacity(rx.prefixes.len());
            for &p in &rx.prefixes {
                let rep = stage(
                    "scoring the forecasts",
                    score_prefix(&test_windows, &forecasts, p, rx.mase_m),
                )?;
                reports.push((p, rep));
            }
            Ok(SeedRun {
                artifacts: SeedArtifacts {
                    seed,
                    checkpoint_dir,
                    history_csv,
                    best_epoch: report.best_epoch,
                    best_val_loss: report.best_val_loss,
                },
                reports,
            })
        })
        .collect::<Result<_>>()?;

    // Assemble rows in a fixed order: model, then prefix, then seed.
    let mut rows = Vec::new();
    for run in &seed_runs {
        for (p, rep) in &run.reports {
            rows.push(metric_row(&rx, "deepedm", *p, run.artifacts.seed, rep));
        }
    }
    rows.extend(baseline_rows(&rx, &test_windows, &baselines, &rx.seeds)?);
    rows.sort_by(|a, b| {
        let order = |m: &str| match m {
            "deepedm" => 0,
            "simplex" => 1,
            _ => 2,
        };
        (order(&a.model), a.p, a.seed).cmp(&(order(&b.model), b.p, b.seed))
    });

    let mut summary = Vec::new();
    for model in ["deepedm", "simplex", "naive"] {
        for &p in &rx.prefixes {
            let group: Vec<&MetricRow> =
                rows.iter().filter(|r| r.model == model && r.p == p).collect();
            let col = |f: fn(&MetricRow) -> f64| -> (f64, f64) {
                mean_and_std(&group.iter().map(|r| f(r)).collect::<Vec<f64>>())
            };
            let (mse_mean, mse_std) = col(|r| r.mse);
            let (mae_mean, mae_std) = col(|r| r.mae);
            let (smape_mean, smape_std) = col(|r| r.smape);
            let (mape_mean, mape_std) = col(|r| r.mape);
            let opt_col = |f: fn(&MetricRow) -> Option<f64>| -> (Option<f64>, Option<f64>) {
                let vals: Vec<f64> = group.iter().filter_map(|r| f(r)).collect();
                if vals.len() == group.len() {
                    let (m, s) = mean_and_std(&vals);
                    (Some(m), Some(s))
                } else {
                    (None, None)
                }
            };
            let (mase_mean, mase_std) = opt_col(|r| r.mase);
            let (owa_mean, owa_std) = opt_col(|r| r.owa);
            summary.push(SummaryRow {
                dataset: rx.dataset_name.clone(),
                model: model.to_string(),
                h,
                p,
                n_seeds: group.len(),
                mse_mean,
                mse_std,
                mae_mean,
                mae_std,
                smape_mean,
                smape_std,
                mape_mean,
                mape_std,
                mase_mean,
                mase_std,
                owa_mean,
                owa_std,
            });
        }
    }

    let metrics_csv = rx.output_dir.join("metrics.csv");
    stage("writing the metric table", {
        let bytes = csv_bytes(&rows)?;
        atomic_write(&metrics_csv, &bytes)
    })?;
    let summary_csv = rx.output_dir.join("summary.csv");
    stage("writing the summary", {
        let bytes = csv_bytes(&summary)?;
        atomic_write(&summary_csv, &bytes)
    })?;

    Ok(ExperimentOutput {
        config_echo,
        metrics_csv,
        summary_csv,
        rows,
        summary,
        per_seed: seed_runs.into_iter().map(|r| r.artifacts).collect(),
    })
}

// ---- neighbor recall driver -------------------------------------------------

/// Grid of the neighbor-recall experiment on a freshly integrated chaotic
/// trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallGrid {
    #[serde(default = "RecallGrid::default_dt")]
    pub dt: f64,
    #[serde(default = "RecallGrid::default_steps")]
    pub n_steps: usize,
    #[serde(default = "RecallGrid::default_ks")]
    pub ks: Vec<usize>,
    #[serde(default = "RecallGrid::default_delta_ts")]
    pub delta_ts: Vec<usize>,
    #[serde(default = "RecallGrid::default_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default = "RecallGrid::default_tau")]
    pub tau: usize,
    #[serde(default = "RecallGrid::default_window")]
    pub window: usize,
    pub seed: u64,
}

impl RecallGrid {
    fn default_dt() -> f64 {
        dynamics::DEFAULT_DT
    }
    fn default_steps() -> usize {
        dynamics::DEFAULT_STEPS
    }
    fn default_ks() -> Vec<usize> {
        vec![1, 3, 5, 7]
    }
    fn default_delta_ts() -> Vec<usize> {
        vec![1, 5, 10]
    }
    fn default_sigmas() -> Vec<f64> {
        vec![0.0, 2.5]
    }
    fn default_tau() -> usize {
        1
    }
    fn default_window() -> usize {
        edm::DEFAULT_RECALL_WINDOW
    }

    pub fn new(seed: u64) -> Self {
        RecallGrid {
            dt: Self::default_dt(),
            n_steps: Self::default_steps(),
            ks: Self::default_ks(),
            delta_ts: Self::default_delta_ts(),
            sigmas: Self::default_sigmas(),
            tau: Self::default_tau(),
            window: Self::default_window(),
            seed,
        }
    }
}

/// One recall measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub delta_t: usize,
    pub sigma_noise: f64,
    /// `time_delay` or `latent`.
    pub source: String,
    pub recall: f64,
}

/// Measure neighbor recall over the grid on a chaotic reference
/// trajectory. With a trained model, each grid point is also scored with
/// the model's latent representation of the same noisy observations.
pub fn run_recall(grid: &RecallGrid, model: Option<&DeepEdm>) -> Result<Vec<RecallRow>> {
    let (system, initial) = dynamics::lorenz_chaotic();
    let traj = stage(
        "integrating the reference trajectory",
        dynamics::integrate_rk4(system, initial, grid.dt, grid.n_steps),
    )?;
    let mut rows = Vec::new();
    for &sigma in &grid.sigmas {
        let latents: Option<Vec<Vec<Vec<f64>>>> = match model {
            None => None,
            Some(m) => {
                let noisy = stage(
                    "generating noisy observations",
                    edm::noisy_observations(&traj, sigma, grid.seed),
                )?;
                let mut per_coord = Vec::with_capacity(3);
                for c in 0..3 {
                    let series: Vec<f64> = noisy.iter().map(|s| s[c]).collect();
                    per_coord.push(stage("encoding the observations", m.encode_series(&series))?);
                }
                Some(per_coord)
            }
        };
        for &k in &grid.ks {
            for &delta_t in &grid.delta_ts {
                let rc = RecallConfig {
                    k,
                    delta_t,
                    tau: grid.tau,
                    window: grid.window,
                    sigma_noise: sigma,
                    coordinate: None,
                    seed: grid.seed,
                };
                let delay = stage(
                    "scoring delay-embedding recall",
                    edm::knn_recall(&traj, &rc, &NeighborSource::DelayEmbedding),
                )?;
                rows.push(RecallRow {
                    k,
                    delta_t,
                    sigma_noise: sigma,
                    source: "time_delay".into(),
                    recall: delay,
                });
                if let Some(lats) = &latents {
                    let latent = stage(
                        "scoring latent recall",
                        edm::knn_recall(&traj, &rc, &NeighborSource::Latents(lats)),
                    )?;
                    rows.push(RecallRow {
                        k,
                        delta_t,
                        sigma_noise: sigma,
                        source: "latent".into(),
                        recall: latent,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Write recall rows as CSV (`K,delta_t,sigma_noise,source,recall`).
pub fn save_recall_csv(path: &Path, rows: &[RecallRow]) -> Result<()> {
    let bytes = csv_bytes(rows)?;
    atomic_write(path, &bytes)
}

// ---- ablation sweeps --------------------------------------------------------

/// Model hyperparameter swept by [`run_ablation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationParam {
    DeltaT,
    Tau,
    TLookback,
}

impl AblationParam {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationParam::DeltaT => "delta_t",
            AblationParam::Tau => "tau",
            AblationParam::TLookback => "t_lookback",
        }
    }
}

impl std::str::FromStr for AblationParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta_t" => Ok(AblationParam::DeltaT),
            "tau" => Ok(AblationParam::Tau),
            "t_lookback" => Ok(AblationParam::TLookback),
            other => Err(Error::InvalidConfig(format!(
                "unknown ablation parameter '{other}' (expected delta_t, tau, or t_lookback)"
            ))),
        }
    }
}

/// One trained-model metric row of an ablation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub param: String,
    pub value: usize,
    pub dataset: String,
    #[serde(rename = "H")]
    pub h: usize,
    pub p: usize,
    pub seed: u64,
    pub mse: f64,
    pub mae: f64,
    pub smape: f64,
    pub mape: f64,
    pub mase: Option<f64>,
    pub owa: Option<f64>,
}

/// Results of an ablation sweep.
#[derive(Debug, Clone)]
pub struct AblationOutput {
    pub csv: PathBuf,
    pub rows: Vec<AblationRow>,
    /// Output of each value's experiment, in value order.
    pub runs: Vec<ExperimentOutput>,
}

/// Sweep one model hyperparameter over `values`, running the full
/// experiment per value in its own subdirectory, and collect the trained
/// model's metric rows into `ablation.csv`.
pub fn run_ablation(
    base: &ExperimentConfig,
    param: AblationParam,
    values: &[usize],
) -> Result<AblationOutput> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one value".into()));
    }
    let rx = stage("resolving the configuration", base.resolved())?;
    let auto_sized = base.model.is_none();
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &value in values {
        let mut model = rx.model;
        match param {
            AblationParam::DeltaT => {
                model.delta_t = value;
                model.latent_dim = model.latent_dim.max(value);
            }
            AblationParam::Tau => model.tau = value,
            AblationParam::TLookback => {
                model.t_lookback = value;
                if auto_sized {
                    model.base_hidden = 2 * value;
                }
            }
        }
        let sub = ExperimentConfig {
            output_dir: base.output_dir.join(format!("ablate_{}_{}", param.as_str(), value)),
            t_lookback: Some(model.t_lookback),
            model: Some(model),
            ..base.clone()
        };
        let out = run_experiment(&sub)?;
        for r in out.rows.iter().filter(|r| r.model == "deepedm") {
            rows.push(AblationRow {
                param: param.as_str().to_string(),
                value,
                dataset: r.dataset.clone(),
                h: r.h,
                p: r.p,
                seed: r.seed,
                mse: r.mse,
                mae: r.mae,
                smape: r.smape,
                mape: r.mape,
                mase: r.mase,
                owa: r.owa,
            });
        }
        runs.push(out);
    }
    let csv = base.output_dir.join("ablation.csv");
    let bytes = csv_bytes(&rows)?;
    stage("writing the ablation table", atomic_write(&csv, &bytes))?;
    Ok(AblationOutput { csv, rows, runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn toy_series(d: usize, n: usize, seed: u64) -> TimeSeries {
        let mut r = stream(seed, "harness-test/series");
        let names = (0..d).map(|i| format!("ch{i}")).collect();
        let channels = (0..d)
            .map(|_| (0..n).map(|_| r.gen_range(-5.0..5.0)).collect())
            .collect();
        TimeSeries::new(names, channels)
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let series = toy_series(3, 40, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        save_csv(&path, &series).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back, series);
    }

    #[test]
    fn single_column_file_loads_as_one_channel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.csv");
        std::fs::write(&path, "pressure\n1.5\n2.5\n-3.0\n").unwrap();
        let s = load_csv(&path).unwrap();
        assert_eq!(s.n_channels(), 1);
        assert_eq!(s.names, vec!["pressure"]);
        assert_eq!(s.channels[0], vec![1.5, 2.5, -3.0]);
    }

    #[test]
    fn leading_time_column_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("timed.csv");
        std::fs::write(&path, "t,ch0,ch1\n0.0,1.0,2.0\n0.01,3.0,4.0\n").unwrap();
        let s = load_csv(&path).unwrap();
        assert_eq!(s.names, vec!["ch0", "ch1"]);
        assert_eq!(s.channels, vec![vec![1.0, 3.0], vec![2.0, 4.0]]);
    }

    #[test]
    fn bad_cells_are_reported_with_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let nan = dir.path().join("nan.csv");
        std::fs::write(&nan, "a,b\n1.0,2.0\n3.0,NaN\n").unwrap();
        let err = load_csv(&nan).unwrap_err().to_string();
        assert!(err.contains(":3:") && err.contains("'b'"), "{err}");

        let junk = dir.path().join("junk.csv");
        std::fs::write(&junk, "a,b\n1.0,oops\n").unwrap();
        let err = load_csv(&junk).unwrap_err();
        assert!(err.is_config());
        let msg = err.to_string();
        assert!(msg.contains(":2:") && msg.contains("'b'"), "{msg}");

        let ragged = dir.path().join("ragged.csv");
        std::fs::write(&ragged, "a,b\n1.0\n").unwrap();
        let msg = load_csv(&ragged).unwrap_err().to_string();
        assert!(msg.contains("expected 2 data fields"), "{msg}");
    }

    #[test]
    fn channel_split_rejects_overlap_and_preserves_names() {
        let series = toy_series(7, 20, 2);
        let err = channel_split(&series, &[0, 1, 2], &[2, 4]).unwrap_err();
        assert!(err.to_string().contains("channel 2"), "{err}");

        let (train, test) = channel_split(&series, &[0, 1, 2], &[4, 5, 6]).unwrap();
        assert_eq!(train.n_channels(), 3);
        assert_eq!(test.n_channels(), 3);
        assert_eq!(train.names, vec!["ch0", "ch1", "ch2"]);
        assert_eq!(test.names, vec!["ch4", "ch5", "ch6"]);
        assert_eq!(test.channels[1], series.channels[5]);
    }

    #[test]
    fn split_specs_validate_their_invariants() {
        let bad = SplitSpec::Temporal { train: 0.5, val: 0.2, test: 0.2 };
        assert!(bad.validate().is_err());
        let good = SplitSpec::Temporal { train: 0.7, val: 0.1, test: 0.2 };
        assert!(good.validate().is_ok());
        let overlap = SplitSpec::Channel { train_channels: vec![0], test_channels: vec![0] };
        assert!(overlap.validate().is_err());
    }

    #[test]
    fn minimal_config_resolves_with_lookback_twice_the_horizon() {
        let json = r#"{"dataset": "data/x.csv", "output_dir": "out", "horizon": 6}"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        let rx = cfg.resolved().unwrap();
        assert_eq!(rx.model.t_lookback, 12);
        assert_eq!(rx.model.horizon, 6);
        assert_eq!(rx.prefixes, vec![1, 5]); // 15 and 48 exceed the horizon
        assert_eq!(rx.seeds, vec![0]);
        assert_eq!(rx.dataset_name, "x");
        // The echo makes every default explicit.
        let echo = serde_json::to_string(&rx.echo()).unwrap();
        assert!(echo.contains("\"delta_t\"") && echo.contains("\"t_lookback\":12"), "{echo}");
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let mut cfg = ExperimentConfig::new("d.csv", "out", 6);
        cfg.model = Some(ModelConfig::new(12, 7));
        assert!(cfg.resolved().unwrap_err().to_string().contains("horizon"));

        let mut cfg = ExperimentConfig::new("d.csv", "out", 6);
        cfg.seeds = vec![1, 1];
        assert!(cfg.resolved().is_err());

        let mut cfg = ExperimentConfig::new("d.csv", "out", 6);
        cfg.prefix_lengths = vec![20];
        assert!(cfg.resolved().is_err());
    }

    /// A small but trainable experiment on a short chaotic trajectory.
    fn tiny_experiment(dir: &Path) -> ExperimentConfig {
        let (system, initial) = dynamics::lorenz_chaotic();
        let ds =
            dynamics::make_dataset("toy_lorenz", system, initial, 0.0, 0.01, 400, 7).unwrap();
        dynamics::write_dataset(dir, &ds).unwrap();
        let mut cfg = ExperimentConfig::new(
            dir.join("toy_lorenz.csv"),
            dir.join("results"),
            4,
        );
        cfg.t_lookback = Some(8);
        cfg.model = Some(ModelConfig {
            delta_t: 2,
            latent_dim: 4,
            base_hidden: 8,
            dec_hidden: 8,
            dropout_p: 0.0,
            ..ModelConfig::new(8, 4)
        });
        cfg.train = Some(TrainConfig { epochs: 2, batch_size: 32, ..TrainConfig::new(0) });
        cfg.prefix_lengths = vec![1, 2, 4];
        cfg.seeds = vec![1, 2];
        cfg
    }

    #[test]
    fn experiment_writes_every_artifact_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_experiment(dir.path());
        let out = run_experiment(&cfg).unwrap();

        // 3 models x 3 prefixes x 2 seeds.
        assert_eq!(out.rows.len(), 18);
        assert_eq!(out.summary.len(), 9);
        assert!(out.config_echo.is_file());
        assert!(out.metrics_csv.is_file());
        assert!(out.summary_csv.is_file());
        for seed in [1u64, 2] {
            assert!(dir.path().join(format!("results/history_seed{seed}.csv")).is_file());
            assert!(dir
                .path()
                .join(format!("results/checkpoint_seed{seed}/checkpoint.json"))
                .is_file());
        }

        // Baseline rows are identical across seeds.
        let naive: Vec<&MetricRow> = out.rows.iter().filter(|r| r.model == "naive").collect();
        for pair in naive.chunks(2) {
            assert_eq!(pair[0].mse, pair[1].mse);
            assert_eq!(pair[0].mase, pair[1].mase);
        }

        // The saved checkpoint reloads into the same model.
        let reloaded = DeepEdm::load(&out.per_seed[0].checkpoint_dir).unwrap();
        assert_eq!(reloaded.config().seed, 1);

        // A rerun reproduces the metric file byte for byte.
        let first = std::fs::read(&out.metrics_csv).unwrap();
        let again = run_experiment(&cfg).unwrap();
        let second = std::fs::read(&again.metrics_csv).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn baselines_alone_skip_training_and_write_their_own_table() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_experiment(dir.path());
        cfg.output_dir = dir.path().join("baseline_results");
        let out = run_baselines(&cfg).unwrap();
        // 2 models x 3 prefixes, all with seed 0.
        assert_eq!(out.rows.len(), 6);
        assert!(out.rows.iter().all(|r| r.seed == 0));
        assert!(out.rows.iter().all(|r| r.model == "simplex" || r.model == "naive"));
        assert!(out.csv.is_file());
        assert!(!cfg.output_dir.join("metrics.csv").exists());
        let text = std::fs::read_to_string(&out.csv).unwrap();
        assert!(text.starts_with("dataset,model,H,p,seed,mse,mae,smape,mape,mase,owa\n"), "{text}");
    }

    #[test]
    fn channel_split_experiment_trains_on_disjoint_channels() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_experiment(dir.path());
        cfg.output_dir = dir.path().join("channel_results");
        cfg.split =
            SplitSpec::Channel { train_channels: vec![0, 1], test_channels: vec![2] };
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.rows.len(), 18);
        assert!(out.rows.iter().all(|r| r.mse.is_finite()));
    }

    #[test]
    fn ablation_emits_rows_for_each_value() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_experiment(dir.path());
        cfg.seeds = vec![1];
        cfg.prefix_lengths = vec![4];
        let out = run_ablation(&cfg, AblationParam::DeltaT, &[2, 3]).unwrap();
        assert!(out.csv.is_file());
        assert_eq!(out.rows.len(), 2); // one deepedm row per value
        assert_eq!(out.rows[0].param, "delta_t");
        assert_eq!(out.rows[0].value, 2);
        assert_eq!(out.rows[1].value, 3);
        assert!(dir.path().join("results/ablate_delta_t_3/metrics.csv").is_file());

        let text = std::fs::read_to_string(&out.csv).unwrap();
        assert!(text.starts_with("param,value,dataset,H,p,seed,"), "{text}");
    }

    #[test]
    fn recall_grid_produces_a_row_per_point_and_source() {
        let grid = RecallGrid {
            n_steps: 600,
            ks: vec![1],
            delta_ts: vec![1, 5],
            sigmas: vec![0.0],
            ..RecallGrid::new(3)
        };
        let rows = run_recall(&grid, None).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.source == "time_delay"));
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.recall)));

        let model = DeepEdm::new(ModelConfig {
            delta_t: 3,
            latent_dim: 4,
            base_hidden: 8,
            dec_hidden: 8,
            ..ModelConfig::new(8, 4)
        })
        .unwrap();
        let rows = run_recall(&grid, Some(&model)).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows.iter().filter(|r| r.source == "latent").count(), 2);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("recall.csv");
        save_recall_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("K,delta_t,sigma_noise,source,recall\n"), "{text}");
        assert_eq!(text.lines().count(), 5);
    }
}
