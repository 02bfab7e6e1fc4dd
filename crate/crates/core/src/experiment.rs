//! Orchestration: JSON experiment configuration, the noise sweep over
//! algorithms x rates x seeds, deterministic report emission, and the
//! worker functions behind the CLI subcommands.
//!
//! Determinism contract: the dataset, split, and standardization are
//! prepared once per config; each sweep cell derives its own seeds from
//! (run seed, rate index, algorithm index), so cells can run in any order
//! and still produce identical rows. Noise derives from (run seed, rate
//! index) alone, so every algorithm at a given cell sees the same corrupted
//! labels.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::clustering::{dpc, CenterPolicy, DecisionGraph, DEFAULT_CENTER_SPREAD};
use crate::data::{
    inject_noise, load_csv_with_mapping, split, standardize, synthesize, Dataset, LabelColumn,
    NoiseKind, NoiseSpec, SynthSpec,
};
use crate::error::{Error, Result};
use crate::gating::DEFAULT_MEMBERSHIP_DENOM;
use crate::metrics::{confusion, report, MetricsReport};
use crate::network::{
    load_model, save_model, train_amnn, train_classic_with_log, AmnnModel, AmnnRecord, Mlp,
    MlpRecord, SavedModel, StandardizerRecord, TrainConfig,
};
use crate::robust::{
    train_ce_mixup_with_log, train_ce_with_log, train_robust_with_log, write_epoch_log, EpochLog,
    RobustConfig,
};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    ClassicDnn,
    Amnn,
    RobustDnn,
    DnnMixup,
    CeDnn,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::ClassicDnn => "classic_dnn",
            Algorithm::Amnn => "amnn",
            Algorithm::RobustDnn => "robust_dnn",
            Algorithm::DnnMixup => "dnn_mixup",
            Algorithm::CeDnn => "ce_dnn",
        }
    }

    pub fn from_name(name: &str) -> Result<Algorithm> {
        match name {
            "classic_dnn" => Ok(Algorithm::ClassicDnn),
            "amnn" => Ok(Algorithm::Amnn),
            "robust_dnn" => Ok(Algorithm::RobustDnn),
            "dnn_mixup" => Ok(Algorithm::DnnMixup),
            "ce_dnn" => Ok(Algorithm::CeDnn),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Where the experiment data comes from: a CSV file or blob synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        #[serde(default = "default_label_column")]
        label: LabelColumn,
    },
    Synth(SynthSpec),
}

fn default_label_column() -> LabelColumn {
    LabelColumn::Name("label".into())
}

/// Classic-mode hyperparameters as they appear in configs. The per-cell
/// seed is derived by the sweep, so there is no seed field here; a missing
/// target_error disables the early-stopping gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub target_error: Option<f64>,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { learning_rate: 1e-4, epochs: 20, batch_size: 128, target_error: None }
    }
}

impl TrainParams {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            target_error: self.target_error.unwrap_or(f64::INFINITY),
            seed,
        }
    }
}

/// Robust-mode hyperparameters as they appear in configs (seedless, like
/// TrainParams).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub q: f64,
    pub k: f64,
    pub sample_rate: f64,
    pub prune_warmup_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for RobustParams {
    fn default() -> Self {
        let d = RobustConfig::default();
        RobustParams {
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            batch_size: d.batch_size,
            q: d.q,
            k: d.k,
            sample_rate: d.sample_rate,
            prune_warmup_epochs: d.prune_warmup_epochs,
            adam_beta1: d.adam_beta1,
            adam_beta2: d.adam_beta2,
            adam_epsilon: d.adam_epsilon,
        }
    }
}

impl RobustParams {
    pub fn to_config(&self, seed: u64) -> RobustConfig {
        RobustConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            q: self.q,
            k: self.k,
            sample_rate: self.sample_rate,
            prune_warmup_epochs: self.prune_warmup_epochs,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_epsilon: self.adam_epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySpec {
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterParams {
    pub policy: PolicySpec,
    pub spread: f64,
    pub membership_denom: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            policy: PolicySpec::Auto,
            spread: DEFAULT_CENTER_SPREAD,
            membership_denom: DEFAULT_MEMBERSHIP_DENOM,
        }
    }
}

impl ClusterParams {
    pub fn center_policy(&self) -> CenterPolicy {
        match self.policy {
            PolicySpec::Auto => CenterPolicy::Auto(self.spread),
            PolicySpec::Fixed(g) => CenterPolicy::Fixed(g),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    pub kind: NoiseKind,
    pub rates: Vec<f64>,
}

impl Default for NoiseParams {
    fn default() -> Self {
        // Rates 5% through 40% in 5-point steps.
        NoiseParams {
            kind: NoiseKind::Symmetric,
            rates: (1..=8).map(|i| i as f64 * 0.05).collect(),
        }
    }
}

fn default_test_ratio() -> f64 {
    0.2
}

fn default_true() -> bool {
    true
}

fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::CeDnn, Algorithm::RobustDnn]
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_hidden() -> Vec<usize> {
    vec![20]
}

fn default_mixup_alpha() -> f64 {
    0.2
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("sweep_out")
}

/// Full experiment description. Every field except `data` has a documented
/// default; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default = "default_test_ratio")]
    pub test_ratio: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub noise: NoiseParams,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_hidden")]
    pub hidden_sizes: Vec<usize>,
    #[serde(default)]
    pub train: TrainParams,
    #[serde(default)]
    pub robust: RobustParams,
    #[serde(default)]
    pub clustering: ClusterParams,
    #[serde(default = "default_mixup_alpha")]
    pub mixup_alpha: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    #[serde(default)]
    pub save_models: bool,
    #[serde(default)]
    pub save_training_logs: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synth(spec) = &self.data {
            spec.validate()?;
        }
        if !(self.test_ratio.is_finite() && (0.0..1.0).contains(&self.test_ratio)) {
            return Err(Error::Config(format!(
                "test_ratio: {} outside [0, 1)",
                self.test_ratio
            )));
        }
        for &rate in &self.noise.rates {
            if !(rate.is_finite() && (0.0..=1.0).contains(&rate)) {
                return Err(Error::Config(format!("noise.rates: {rate} outside [0, 1]")));
            }
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("algorithms: list must be nonempty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: list must be nonempty".into()));
        }
        for (name, dup) in [
            ("algorithms", has_duplicates(&self.algorithms)),
            ("seeds", has_duplicates(&self.seeds)),
            ("noise.rates", has_duplicates(&self.noise.rates.iter().map(|r| r.to_bits()).collect::<Vec<_>>())),
        ] {
            if dup {
                return Err(Error::Config(format!(
                    "{name}: duplicate entries would emit duplicate rows"
                )));
            }
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden_sizes: every width must be >= 1".into()));
        }
        self.train
            .to_config(0)
            .validate()
            .map_err(|e| Error::Config(format!("train: {e}")))?;
        self.robust
            .to_config(0)
            .validate()
            .map_err(|e| Error::Config(format!("robust: {e}")))?;
        if !(self.mixup_alpha.is_finite() && self.mixup_alpha > 0.0) {
            return Err(Error::Config(format!(
                "mixup_alpha: {} must be > 0",
                self.mixup_alpha
            )));
        }
        let c = &self.clustering;
        if !(c.spread.is_finite() && c.spread >= 0.0) {
            return Err(Error::Config(format!("clustering.spread: {} must be >= 0", c.spread)));
        }
        if !(c.membership_denom.is_finite() && c.membership_denom > 0.0) {
            return Err(Error::Config(format!(
                "clustering.membership_denom: {} must be > 0",
                c.membership_denom
            )));
        }
        if let PolicySpec::Fixed(g) = c.policy {
            if g == 0 {
                return Err(Error::Config("clustering.policy: fixed count must be >= 1".into()));
            }
        }
        Ok(())
    }
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    for i in 1..items.len() {
        if items[..i].contains(&items[i]) {
            return true;
        }
    }
    false
}

/// Strict JSON parse plus invariant validation.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

/// The shared, noise-free foundation of a sweep: loaded, split, and
/// (optionally) standardized once, so every cell sees identical data.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub standardizer: Option<StandardizerRecord>,
    pub label_names: Option<Vec<String>>,
}

pub fn load_source(source: &DataSource) -> Result<(Dataset, Option<Vec<String>>)> {
    match source {
        DataSource::Synth(spec) => Ok((synthesize(spec)?, None)),
        DataSource::Csv { path, label } => {
            let (ds, names) = load_csv_with_mapping(path, label)?;
            Ok((ds, Some(names)))
        }
    }
}

pub fn prepare(config: &ExperimentConfig) -> Result<PreparedData> {
    let (full, label_names) = load_source(&config.data)?;
    let (train, test) = split(&full, config.test_ratio, config.split_seed)?;
    if config.standardize {
        let (train, test, means, stds) = standardize(&train, &test)?;
        Ok(PreparedData {
            train,
            test,
            standardizer: Some(StandardizerRecord { means, stds }),
            label_names,
        })
    } else {
        Ok(PreparedData { train, test, standardizer: None, label_names })
    }
}

/// A trained model of either family, with a uniform prediction interface.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Classic(Mlp),
    Modular(AmnnModel),
}

impl TrainedModel {
    pub fn predict(&self, features: &Array2<f64>) -> Result<Vec<usize>> {
        match self {
            TrainedModel::Classic(net) => net.predict(features),
            TrainedModel::Modular(model) => model.predict(features),
        }
    }

    pub fn to_saved(&self, standardizer: Option<StandardizerRecord>) -> SavedModel {
        match self {
            TrainedModel::Classic(net) => {
                let mut record = MlpRecord::from_mlp(net);
                record.standardizer = standardizer;
                SavedModel::Mlp(record)
            }
            TrainedModel::Modular(model) => {
                let mut record = AmnnRecord::from_model(model);
                record.standardizer = standardizer;
                SavedModel::Amnn(record)
            }
        }
    }
}

pub struct CellOutput {
    pub metrics: MetricsReport,
    pub model: TrainedModel,
    pub epoch_logs: Option<Vec<EpochLog>>,
}

/// Runs one sweep cell: corrupt the training labels for this (seed, rate),
/// train the algorithm with its derived seed, evaluate on the clean test
/// split. Depends only on the cell coordinates, never on other cells.
pub fn run_cell(
    prep: &PreparedData,
    config: &ExperimentConfig,
    algo_idx: usize,
    rate_idx: usize,
    run_seed: u64,
) -> Result<CellOutput> {
    let algorithm = config.algorithms[algo_idx];
    let rate = config.noise.rates[rate_idx];
    let noise_seed = derive_seed(run_seed, &[rate_idx as u64]);
    let train_seed = derive_seed(run_seed, &[rate_idx as u64, algo_idx as u64]);

    let train_set = if rate > 0.0 {
        let spec = NoiseSpec { kind: config.noise.kind, rate, seed: noise_seed };
        let (noisy, _) = inject_noise(&prep.train.labels, &spec, prep.train.class_count)?;
        let mut ds = Dataset::new(prep.train.features.clone(), noisy, prep.train.class_count)?;
        ds.clean_labels = Some(prep.train.labels.clone());
        ds
    } else {
        prep.train.clone()
    };

    let hidden = &config.hidden_sizes;
    let (model, epoch_logs) = match algorithm {
        Algorithm::ClassicDnn => {
            let cfg = config.train.to_config(train_seed);
            let (net, _) = train_classic_with_log(&train_set, hidden, &cfg)?;
            (TrainedModel::Classic(net), None)
        }
        Algorithm::Amnn => {
            let cfg = config.train.to_config(train_seed);
            let model = train_amnn(
                &train_set,
                &config.clustering.center_policy(),
                config.clustering.membership_denom,
                hidden,
                &cfg,
            )?;
            (TrainedModel::Modular(model), None)
        }
        Algorithm::RobustDnn => {
            let cfg = config.robust.to_config(train_seed);
            let (net, logs) = train_robust_with_log(&train_set, hidden, &cfg)?;
            (TrainedModel::Classic(net), Some(logs))
        }
        Algorithm::CeDnn => {
            let cfg = config.robust.to_config(train_seed);
            let (net, logs) = train_ce_with_log(&train_set, hidden, &cfg)?;
            (TrainedModel::Classic(net), Some(logs))
        }
        Algorithm::DnnMixup => {
            let cfg = config.robust.to_config(train_seed);
            let (net, logs) = train_ce_mixup_with_log(&train_set, hidden, &cfg, config.mixup_alpha)?;
            (TrainedModel::Classic(net), Some(logs))
        }
    };

    let predictions = model.predict(&prep.test.features)?;
    let cm = confusion(&prep.test.labels, &predictions, prep.test.class_count)?;
    let metrics = report(&cm)?;
    Ok(CellOutput { metrics, model, epoch_logs })
}

/// One sweep result row. `metrics` and `error` are mutually exclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub noise_rate: f64,
    pub seed: u64,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellTiming {
    pub algorithm: Algorithm,
    pub noise_rate: f64,
    pub seed: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub timings: Vec<CellTiming>,
}

/// Per-(algorithm, rate) aggregate over the successful rows. `std` is the
/// population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    pub noise_rate: f64,
    pub runs: usize,
    pub failed: usize,
    pub mean: Option<MetricsReport>,
    pub std: Option<MetricsReport>,
}

impl SweepReport {
    pub fn summarize(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(Algorithm, u64)> = Vec::new();
        for row in &self.rows {
            let key = (row.algorithm, row.noise_rate.to_bits());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.iter()
            .map(|&(algorithm, rate_bits)| {
                let noise_rate = f64::from_bits(rate_bits);
                let group: Vec<&SweepRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.algorithm == algorithm && r.noise_rate.to_bits() == rate_bits)
                    .collect();
                let ok: Vec<MetricsReport> =
                    group.iter().filter_map(|r| r.metrics).collect();
                let (mean, std) = aggregate(&ok);
                SummaryRow {
                    algorithm,
                    noise_rate,
                    runs: group.len(),
                    failed: group.len() - ok.len(),
                    mean,
                    std,
                }
            })
            .collect()
    }
}

fn aggregate(reports: &[MetricsReport]) -> (Option<MetricsReport>, Option<MetricsReport>) {
    if reports.is_empty() {
        return (None, None);
    }
    let n = reports.len() as f64;
    let fields = |r: &MetricsReport| {
        [r.accuracy, r.weighted_precision, r.weighted_recall, r.weighted_f1, r.kappa]
    };
    let mut mean = [0.0; 5];
    for r in reports {
        for (m, v) in mean.iter_mut().zip(fields(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = [0.0; 5];
    for r in reports {
        for ((s, v), m) in var.iter_mut().zip(fields(r)).zip(mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut var {
        *s = (*s / n).sqrt();
    }
    let pack = |f: [f64; 5]| MetricsReport {
        accuracy: f[0],
        weighted_precision: f[1],
        weighted_recall: f[2],
        weighted_f1: f[3],
        kappa: f[4],
    };
    (Some(pack(mean)), Some(pack(var)))
}

/// Runs every (algorithm, rate, seed) cell in deterministic order. Training
/// failures become failed rows; the sweep keeps going.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepReport> {
    config.validate()?;
    let prep = prepare(config)?;
    let save_artifacts = config.save_models || config.save_training_logs;
    if save_artifacts {
        std::fs::create_dir_all(&config.output_dir)
            .map_err(|e| Error::io(config.output_dir.display().to_string(), e))?;
    }
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for (algo_idx, &algorithm) in config.algorithms.iter().enumerate() {
        for (rate_idx, &noise_rate) in config.noise.rates.iter().enumerate() {
            for &seed in &config.seeds {
                let started = Instant::now();
                let outcome = run_cell(&prep, config, algo_idx, rate_idx, seed);
                let wall_time_s = started.elapsed().as_secs_f64();
                let row = match outcome {
                    Ok(cell) => {
                        if save_artifacts {
                            write_cell_artifacts(config, &prep, &cell, algorithm, noise_rate, seed)?;
                        }
                        SweepRow {
                            algorithm,
                            noise_rate,
                            seed,
                            metrics: Some(cell.metrics),
                            error: None,
                        }
                    }
                    Err(e) => SweepRow {
                        algorithm,
                        noise_rate,
                        seed,
                        metrics: None,
                        error: Some(e.to_string()),
                    },
                };
                rows.push(row);
                timings.push(CellTiming { algorithm, noise_rate, seed, wall_time_s });
            }
        }
    }
    Ok(SweepReport { rows, timings })
}

fn write_cell_artifacts(
    config: &ExperimentConfig,
    prep: &PreparedData,
    cell: &CellOutput,
    algorithm: Algorithm,
    noise_rate: f64,
    seed: u64,
) -> Result<()> {
    let stem = format!("{}_rate{}_seed{}", algorithm.name(), noise_rate, seed);
    if config.save_models {
        let path = config.output_dir.join(format!("model_{stem}.json"));
        save_model(&path, &cell.model.to_saved(prep.standardizer.clone()))?;
    }
    if config.save_training_logs {
        if let Some(logs) = &cell.epoch_logs {
            let path = config.output_dir.join(format!("trainlog_{stem}.csv"));
            write_epoch_log(&path, logs)?;
        }
    }
    Ok(())
}

/// 17-significant-digit decimal form used for every float CSV field.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub const ROWS_HEADER: &str =
    "algorithm,noise_rate,seed,accuracy,weighted_precision,weighted_recall,weighted_f1,kappa,status";

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub fn rows_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(ROWS_HEADER);
    out.push('\n');
    for row in rows {
        let (metrics, status) = match (&row.metrics, &row.error) {
            (Some(m), None) => (
                [
                    fmt_f64(m.accuracy),
                    fmt_f64(m.weighted_precision),
                    fmt_f64(m.weighted_recall),
                    fmt_f64(m.weighted_f1),
                    fmt_f64(m.kappa),
                ]
                .join(","),
                "ok".to_string(),
            ),
            (None, Some(e)) => (",,,,".to_string(), csv_escape(e)),
            _ => (",,,,".to_string(), "invalid row".to_string()),
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.algorithm.name(),
            fmt_f64(row.noise_rate),
            row.seed,
            metrics,
            status
        ));
    }
    out
}

/// Parses rows.csv back into rows; with `fmt_f64`'s 17 significant digits
/// this reproduces the in-memory report bit for bit.
pub fn read_rows_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Io { path: display.clone(), message: e.to_string() })?;
    let parse_err = |message: String| Error::Parse { path: display.clone(), message };
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        if record.len() != 9 {
            return Err(parse_err(format!("row {}: expected 9 fields", i + 1)));
        }
        let f = |j: usize| -> Result<f64> {
            record[j]
                .parse::<f64>()
                .map_err(|e| parse_err(format!("row {}, field {}: {e}", i + 1, j + 1)))
        };
        let algorithm = Algorithm::from_name(&record[0])?;
        let noise_rate = f(1)?;
        let seed = record[2]
            .parse::<u64>()
            .map_err(|e| parse_err(format!("row {}: seed: {e}", i + 1)))?;
        let status = record[8].to_string();
        let row = if status == "ok" {
            SweepRow {
                algorithm,
                noise_rate,
                seed,
                metrics: Some(MetricsReport {
                    accuracy: f(3)?,
                    weighted_precision: f(4)?,
                    weighted_recall: f(5)?,
                    weighted_f1: f(6)?,
                    kappa: f(7)?,
                }),
                error: None,
            }
        } else {
            SweepRow { algorithm, noise_rate, seed, metrics: None, error: Some(status) }
        };
        rows.push(row);
    }
    Ok(rows)
}

pub const SUMMARY_HEADER: &str = "algorithm,noise_rate,runs,failed,accuracy_mean,accuracy_std,weighted_precision_mean,weighted_precision_std,weighted_recall_mean,weighted_recall_std,weighted_f1_mean,weighted_f1_std,kappa_mean,kappa_std";

pub fn summary_csv(summary: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for row in summary {
        let stats = match (&row.mean, &row.std) {
            (Some(m), Some(s)) => [
                fmt_f64(m.accuracy),
                fmt_f64(s.accuracy),
                fmt_f64(m.weighted_precision),
                fmt_f64(s.weighted_precision),
                fmt_f64(m.weighted_recall),
                fmt_f64(s.weighted_recall),
                fmt_f64(m.weighted_f1),
                fmt_f64(s.weighted_f1),
                fmt_f64(m.kappa),
                fmt_f64(s.kappa),
            ]
            .join(","),
            _ => ",,,,,,,,,".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.algorithm.name(),
            fmt_f64(row.noise_rate),
            row.runs,
            row.failed,
            stats
        ));
    }
    out
}

fn fmt_rate_percent(rate: f64) -> String {
    let text = format!("{:.4}", rate * 100.0);
    let trimmed = text.trim_end_matches('0').trim_end_matches('.');
    format!("{trimmed}%")
}

/// Markdown table shaped like the paper's noise-ratio grid: one row per
/// algorithm, one column per rate, cells are mean accuracy in percent.
pub fn summary_markdown(summary: &[SummaryRow]) -> String {
    let mut algorithms: Vec<Algorithm> = Vec::new();
    let mut rates: Vec<u64> = Vec::new();
    for row in summary {
        if !algorithms.contains(&row.algorithm) {
            algorithms.push(row.algorithm);
        }
        if !rates.contains(&row.noise_rate.to_bits()) {
            rates.push(row.noise_rate.to_bits());
        }
    }
    let mut out = String::from("# Noise sweep summary\n\n");
    out.push_str("Mean accuracy (%) on the clean test split by train-label noise rate.\n\n");
    out.push_str("| algorithm |");
    for &bits in &rates {
        out.push_str(&format!(" {} |", fmt_rate_percent(f64::from_bits(bits))));
    }
    out.push('\n');
    out.push_str("|---|");
    out.push_str(&"---|".repeat(rates.len()));
    out.push('\n');
    for &algorithm in &algorithms {
        out.push_str(&format!("| {} |", algorithm.name()));
        for &bits in &rates {
            let cell = summary
                .iter()
                .find(|r| r.algorithm == algorithm && r.noise_rate.to_bits() == bits)
                .and_then(|r| r.mean.as_ref())
                .map(|m| format!("{:.2}", m.accuracy * 100.0))
                .unwrap_or_else(|| "-".to_string());
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}

pub const TIMINGS_HEADER: &str = "algorithm,noise_rate,seed,wall_time_s";

pub fn timings_csv(timings: &[CellTiming]) -> String {
    let mut out = String::from(TIMINGS_HEADER);
    out.push('\n');
    for t in timings {
        out.push_str(&format!(
            "{},{},{},{}\n",
            t.algorithm.name(),
            fmt_f64(t.noise_rate),
            t.seed,
            fmt_f64(t.wall_time_s)
        ));
    }
    out
}

/// Writes rows.csv, summary.csv, summary.md, and timings.csv. Everything
/// except timings.csv is byte-deterministic for a given config.
pub fn emit_report(report: &SweepReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let summary = report.summarize();
    let write = |name: &str, content: String| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, content).map_err(|e| Error::io(path.display().to_string(), e))
    };
    write("rows.csv", rows_csv(&report.rows))?;
    write("summary.csv", summary_csv(&summary))?;
    write("summary.md", summary_markdown(&summary))?;
    write("timings.csv", timings_csv(&report.timings))?;
    Ok(())
}

/// Writes a dataset as CSV with feature columns f0..f{D-1} and a trailing
/// integer label column, parseable by the CSV loader.
pub fn write_dataset_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let mut out = String::new();
    for j in 0..ds.dim() {
        out.push_str(&format!("f{j},"));
    }
    out.push_str("label\n");
    for i in 0..ds.n() {
        for j in 0..ds.dim() {
            out.push_str(&format!("{},", ds.features[[i, j]]));
        }
        out.push_str(&format!("{}\n", ds.labels[i]));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// `synth` subcommand: generate the configured blob dataset and write it
/// under the output directory.
pub fn cmd_synth(config: &ExperimentConfig) -> Result<String> {
    let spec = match &config.data {
        DataSource::Synth(spec) => spec,
        DataSource::Csv { .. } => {
            return Err(Error::Config("synth requires a synth data source".into()))
        }
    };
    let ds = synthesize(spec)?;
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| Error::io(config.output_dir.display().to_string(), e))?;
    let path = config.output_dir.join("synth.csv");
    write_dataset_csv(&path, &ds)?;
    Ok(format!(
        "wrote {} ({} samples, {} features, {} classes)",
        path.display(),
        ds.n(),
        ds.dim(),
        ds.class_count
    ))
}

/// `cluster` subcommand: density-peak clustering over the full dataset plus
/// a decision-graph dump for offline center inspection.
pub fn cmd_cluster(config: &ExperimentConfig) -> Result<String> {
    let (mut ds, _) = load_source(&config.data)?;
    if config.standardize {
        let empty = Dataset::new(Array2::zeros((0, ds.dim())), Vec::new(), ds.class_count)?;
        let (standardized, _, _, _) = standardize(&ds, &empty)?;
        ds = standardized;
    }
    let (model, graph) = dpc(&ds.features, &config.clustering.center_policy())?;
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| Error::io(config.output_dir.display().to_string(), e))?;
    let path = config.output_dir.join("decision_graph.csv");
    write_decision_graph_csv(&path, &graph, &model.assignments, &model.centers)?;
    Ok(format!(
        "found {} centers at indices {:?}; decision graph in {}",
        model.centers.len(),
        model.centers,
        path.display()
    ))
}

fn write_decision_graph_csv(
    path: &Path,
    graph: &DecisionGraph,
    assignments: &[usize],
    centers: &[usize],
) -> Result<()> {
    let mut out = String::from("index,alpha,beta,gamma,assignment,is_center\n");
    for i in 0..graph.alpha.len() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i,
            fmt_f64(graph.alpha[i]),
            fmt_f64(graph.beta[i]),
            fmt_f64(graph.gamma[i]),
            assignments[i],
            u8::from(centers.contains(&i))
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// `train` subcommand: exactly one algorithm, trained on the clean train
/// split with the same seed derivation as a sweep cell at rate index 0, so
/// a rate-0 sweep row and a standalone train agree exactly. Saves the model
/// (with the fitted standardizer) and reports clean-test metrics.
pub fn cmd_train(config: &ExperimentConfig, seed_override: Option<u64>) -> Result<String> {
    config.validate()?;
    if config.algorithms.len() != 1 {
        return Err(Error::Config("train expects exactly one algorithm".into()));
    }
    let run_seed = seed_override.unwrap_or(config.seeds[0]);
    let mut clean = config.clone();
    clean.noise.rates = vec![0.0];
    let prep = prepare(&clean)?;
    let cell = run_cell(&prep, &clean, 0, 0, run_seed)?;

    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| Error::io(config.output_dir.display().to_string(), e))?;
    let model_path = config
        .output_dir
        .join(format!("model_{}_seed{}.json", config.algorithms[0].name(), run_seed));
    save_model(&model_path, &cell.model.to_saved(prep.standardizer.clone()))?;
    if config.save_training_logs {
        if let Some(logs) = &cell.epoch_logs {
            let log_path = config
                .output_dir
                .join(format!("trainlog_{}_seed{}.csv", config.algorithms[0].name(), run_seed));
            write_epoch_log(&log_path, logs)?;
        }
    }
    Ok(format!(
        "{}\n{}\nmodel saved to {}",
        MetricsReport::CSV_HEADER,
        cell.metrics.csv_row(),
        model_path.display()
    ))
}

/// `evaluate` subcommand: load a saved model, apply its embedded
/// standardizer to the configured dataset, and print one metrics row.
pub fn cmd_evaluate(config: &ExperimentConfig) -> Result<String> {
    let model_path = config
        .model_path
        .as_ref()
        .ok_or_else(|| Error::Config("evaluate requires model_path in the config".into()))?;
    let saved = load_model(model_path)?;
    let (ds, _) = load_source(&config.data)?;
    let features = match saved.standardizer() {
        Some(s) => {
            crate::data::apply_standardizer(&ds, &s.means, &s.stds)?.features
        }
        None => ds.features.clone(),
    };
    let model = match &saved {
        SavedModel::Mlp(record) => TrainedModel::Classic(record.to_mlp()?),
        SavedModel::Amnn(record) => TrainedModel::Modular(record.to_model()?),
    };
    let predictions = model.predict(&features)?;
    let output_classes = match &saved {
        SavedModel::Mlp(record) => *record.layer_sizes.last().unwrap(),
        SavedModel::Amnn(record) => record
            .subnets
            .first()
            .and_then(|s| s.layer_sizes.last().copied())
            .unwrap_or(ds.class_count),
    };
    let cm = confusion(&ds.labels, &predictions, ds.class_count.max(output_classes))?;
    let metrics = report(&cm)?;
    Ok(format!("{}\n{}", MetricsReport::CSV_HEADER, metrics.csv_row()))
}

/// `sweep` subcommand: full grid run plus report files.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<String> {
    let report = run_sweep(config)?;
    emit_report(&report, &config.output_dir)?;
    let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
    Ok(format!(
        "{} rows ({} failed); reports in {}",
        report.rows.len(),
        failed,
        config.output_dir.display()
    ))
}
