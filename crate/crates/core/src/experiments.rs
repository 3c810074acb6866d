//! Declarative ablation grids: one axis varies, everything else stays at the
//! base configuration, and every cell is trained and evaluated with a seed
//! derived from the master seed, the axis value and the repeat index.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{format_percent, MetricsReport};
use crate::events::{build_dataset, Dataset, WindowSpec};
use crate::features::{prepare_split, Channel, FeatureConfig, FeatureManifest, NeighborSlot};
use crate::nn::{NetworkDims, NetworkParams};
use crate::synthgen::{generate_recordings, SynthConfig};
use crate::training::{evaluate, train, TrainConfig, TrainHistory};
use crate::trajectory::{load_recordings, ParseOptions, Recording};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Cells,
    Channels,
    FrameSize,
    Slots,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Cells => "cells",
            Axis::Channels => "channels",
            Axis::FrameSize => "frame_size",
            Axis::Slots => "slots",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Count(usize),
    Channels(Vec<Channel>),
    Slots(Vec<NeighborSlot>),
}

impl AxisValue {
    /// Canonical text form, e.g. `128`, `dp+dv`, `PV+LP+RP`.
    pub fn label(&self) -> String {
        fn join<T: fmt::Display + Ord + Copy>(items: &[T]) -> String {
            let mut v = items.to_vec();
            v.sort_unstable();
            v.dedup();
            v.iter().map(T::to_string).collect::<Vec<_>>().join("+")
        }
        match self {
            AxisValue::Count(n) => n.to_string(),
            AxisValue::Channels(c) => join(c),
            AxisValue::Slots(s) => join(s),
        }
    }

    fn sort_key(&self) -> (usize, Vec<usize>) {
        match self {
            AxisValue::Count(n) => (*n, Vec::new()),
            AxisValue::Channels(c) => (c.len(), c.iter().map(|&x| x as usize).collect()),
            AxisValue::Slots(s) => (s.len(), s.iter().map(|x| x.index()).collect()),
        }
    }

    fn fits(&self, axis: Axis) -> bool {
        match (axis, self) {
            (Axis::Cells | Axis::FrameSize, AxisValue::Count(n)) => *n > 0,
            (Axis::Channels, AxisValue::Channels(c)) => !c.is_empty(),
            (Axis::Slots, AxisValue::Slots(s)) => !s.is_empty(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseConfig {
    pub features: FeatureConfig,
    pub hidden: usize,
    pub train: TrainConfig,
    pub window: WindowSpec,
    /// Fraction of windows used for training.
    pub split_fraction: f64,
}

impl Default for BaseConfig {
    fn default() -> Self {
        BaseConfig {
            features: FeatureConfig::default(),
            hidden: 128,
            train: TrainConfig::default(),
            window: WindowSpec::default(),
            split_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Recordings { dir: PathBuf },
    Synthetic { config: SynthConfig, recordings: usize },
}

impl DataSource {
    pub fn load(&self) -> Result<Vec<Recording>> {
        match self {
            DataSource::Recordings { dir } => load_recordings(dir, &ParseOptions::default()),
            DataSource::Synthetic { config, recordings } => {
                Ok(generate_recordings(config, *recordings)?.into_iter().map(|o| o.recording).collect())
            }
        }
    }
}

fn default_repeats() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub axis: Axis,
    pub grid: Vec<AxisValue>,
    #[serde(default)]
    pub base: BaseConfig,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub source: DataSource,
}

/// Frame-set sizes tried when none are given.
pub const DEFAULT_FRAME_GRID: [usize; 5] = [2, 3, 5, 8, 13];

impl AblationSpec {
    pub fn check(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("ablation grid is empty".into()));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("repeats must be at least 1".into()));
        }
        if let Some(v) = self.grid.iter().find(|v| !v.fits(self.axis)) {
            return Err(Error::InvalidConfig(format!("grid value `{}` does not fit axis {}", v.label(), self.axis)));
        }
        self.base.train.check()?;
        self.base.window.check()?;
        self.base.features.clone().canonicalized()?;
        Ok(())
    }

    /// Base configuration with the axis set to `value`.
    pub fn cell(&self, value: &AxisValue) -> CellConfig {
        let b = &self.base;
        let mut cell = CellConfig {
            features: b.features.clone(),
            hidden: b.hidden,
            train: b.train.clone(),
            window: b.window,
            split_fraction: b.split_fraction,
        };
        match value {
            AxisValue::Count(n) if self.axis == Axis::Cells => cell.hidden = *n,
            AxisValue::Count(n) => {
                cell.window.n = *n;
                cell.features.n = *n;
            }
            AxisValue::Channels(c) => cell.features.channels = c.clone(),
            AxisValue::Slots(s) => cell.features.slots = s.clone(),
        }
        cell.features.n = cell.window.n;
        cell
    }
}

/// Fully resolved settings of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub features: FeatureConfig,
    pub hidden: usize,
    pub train: TrainConfig,
    pub window: WindowSpec,
    pub split_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub axis_value: AxisValue,
    pub repeat: usize,
    pub seed: u64,
    pub metrics: Option<MetricsReport>,
    pub train_seconds: f64,
    pub config_hash: String,
    pub error: Option<String>,
}

/// First eight bytes of `sha256("{master}:{label}:{repeat}")`, little-endian.
pub fn cell_seed(master: u64, value: &AxisValue, repeat: usize) -> u64 {
    let digest = Sha256::digest(format!("{master}:{}:{repeat}", value.label()).as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Dataset seed for a window length; shared by every cell with that `n`.
pub fn dataset_seed(master: u64, n: usize) -> u64 {
    let digest = Sha256::digest(format!("{master}:dataset:{n}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn config_hash(cell: &CellConfig, dataset_seed: u64) -> String {
    let json = serde_json::to_vec(&(cell, dataset_seed)).expect("config serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}

/// Output of [`train_and_evaluate`].
pub struct Trained {
    pub params: NetworkParams<f64>,
    pub history: TrainHistory,
    pub manifest: FeatureManifest,
    pub test_metrics: MetricsReport,
    pub train_seconds: f64,
}

/// Encodes a dataset, trains a fresh network and scores the test split.
pub fn train_and_evaluate(
    dataset: &Dataset,
    recordings: &[Recording],
    features: &FeatureConfig,
    hidden: usize,
    train_config: &TrainConfig,
    stride: usize,
) -> Result<Trained> {
    let features = features.clone().canonicalized()?;
    let (train_seqs, test_seqs, manifest) =
        prepare_split(&dataset.train, &dataset.test, &features, stride, recordings)?;
    let dims = NetworkDims::new(features.width(), hidden);
    let started = Instant::now();
    let (params, history) = train(&train_seqs, &dims, train_config, None)?;
    let train_seconds = started.elapsed().as_secs_f64();
    let test_metrics = evaluate(&params, &test_seqs)?;
    Ok(Trained { params, history, manifest, test_metrics, train_seconds })
}

pub const RESULT_HEADER: [&str; 14] = [
    "axis",
    "value",
    "repeat",
    "seed",
    "accuracy",
    "precision",
    "recall",
    "tp",
    "fp",
    "tn",
    "fn",
    "train_seconds",
    "config_hash",
    "error",
];

fn csv_line(fields: &[String]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(fields)?;
    w.into_inner().map_err(|e| Error::InvalidConfig(e.to_string()))
}

/// One CSV row. Seconds are written only with `with_timing`.
pub fn result_row(axis: Axis, r: &RunResult, with_timing: bool) -> Vec<String> {
    let m = r.metrics.as_ref();
    let count = |f: fn(&MetricsReport) -> usize| m.map_or_else(String::new, |m| f(m).to_string());
    vec![
        axis.to_string(),
        r.axis_value.label(),
        r.repeat.to_string(),
        r.seed.to_string(),
        format_percent(m.and_then(|m| m.accuracy)),
        format_percent(m.and_then(|m| m.precision)),
        format_percent(m.and_then(|m| m.recall)),
        count(|m| m.counts.tp),
        count(|m| m.counts.fp),
        count(|m| m.counts.tn),
        count(|m| m.counts.fn_),
        if with_timing { format!("{:.3}", r.train_seconds) } else { "n/a".into() },
        r.config_hash.clone(),
        r.error.clone().unwrap_or_default(),
    ]
}

/// Appends rows as they finish; each row is a single write.
struct ResultSink {
    file: fs::File,
    path: PathBuf,
}

impl ResultSink {
    fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut file =
            OpenOptions::new().create(true).write(true).truncate(true).open(path).map_err(|e| Error::io(path, e))?;
        let header: Vec<String> = RESULT_HEADER.iter().map(|s| s.to_string()).collect();
        file.write_all(&csv_line(&header)?).map_err(|e| Error::io(path, e))?;
        Ok(ResultSink { file, path: path.to_path_buf() })
    }

    fn append(&mut self, row: &[String]) -> Result<()> {
        self.file.write_all(&csv_line(row)?).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Write wall-clock seconds instead of `n/a`.
    pub record_timing: bool,
}

/// Runs every grid value `repeats` times. Failures of single cells are
/// recorded in their row; only data loading and output errors abort.
pub fn run_ablation(
    spec: &AblationSpec,
    recordings: &[Recording],
    out: Option<&Path>,
    options: RunOptions,
) -> Result<Vec<RunResult>> {
    spec.check()?;
    let mut sink = out.map(ResultSink::create).transpose()?;
    let mut datasets: BTreeMap<usize, std::result::Result<Dataset, String>> = BTreeMap::new();
    let mut results = Vec::new();
    for value in &spec.grid {
        let cell = spec.cell(value);
        let n = cell.window.n;
        let ds_seed = dataset_seed(spec.master_seed, n);
        let dataset = datasets.entry(n).or_insert_with(|| {
            build_dataset(recordings, &cell.window, ds_seed, cell.split_fraction).map_err(|e| e.to_string())
        });
        let hash = config_hash(&cell, ds_seed);
        for repeat in 0..spec.repeats {
            let seed = cell_seed(spec.master_seed, value, repeat);
            let train_config = TrainConfig { seed, ..cell.train.clone() };
            log::info!("{} = {} repeat {repeat}", spec.axis, value.label());
            let outcome = match dataset {
                Ok(ds) => {
                    train_and_evaluate(ds, recordings, &cell.features, cell.hidden, &train_config, cell.window.stride)
                        .map_err(|e| e.to_string())
                }
                Err(e) => Err(e.clone()),
            };
            let result = match outcome {
                Ok(t) => RunResult {
                    axis_value: value.clone(),
                    repeat,
                    seed,
                    metrics: Some(t.test_metrics),
                    train_seconds: t.train_seconds,
                    config_hash: hash.clone(),
                    error: None,
                },
                Err(e) => {
                    log::warn!("{} = {} repeat {repeat} failed: {e}", spec.axis, value.label());
                    RunResult {
                        axis_value: value.clone(),
                        repeat,
                        seed,
                        metrics: None,
                        train_seconds: 0.0,
                        config_hash: hash.clone(),
                        error: Some(e),
                    }
                }
            };
            if let Some(sink) = sink.as_mut() {
                sink.append(&result_row(spec.axis, &result, options.record_timing))?;
            }
            results.push(result);
        }
    }
    Ok(results)
}

/// Mean, min and max of accuracy, precision and recall (percent) per axis
/// value over repeats, ordered by axis value. Undefined metrics are skipped;
/// a value with none defined gets `n/a`.
pub fn emit_figure_data(results: &[RunResult], axis: Axis) -> Result<String> {
    if results.is_empty() {
        return Err(Error::InvalidConfig("no results to summarize".into()));
    }
    let mut groups: Vec<(&AxisValue, Vec<&RunResult>)> = Vec::new();
    for r in results {
        match groups.iter_mut().find(|(v, _)| **v == r.axis_value) {
            Some((_, g)) => g.push(r),
            None => groups.push((&r.axis_value, vec![r])),
        }
    }
    groups.sort_by_key(|g| g.0.sort_key());
    let mut header = vec![axis.to_string()];
    for m in ["accuracy", "precision", "recall"] {
        header.extend(["mean", "min", "max"].map(|s| format!("{m}_{s}")));
    }
    header.push("runs".into());
    let mut out = csv_line(&header)?;
    let pick: [fn(&MetricsReport) -> Option<f64>; 3] = [|m| m.accuracy, |m| m.precision, |m| m.recall];
    for (value, runs) in groups {
        let mut row = vec![value.label()];
        for f in pick {
            let vals: Vec<f64> = runs.iter().filter_map(|r| r.metrics.as_ref().and_then(f)).collect();
            if vals.is_empty() {
                row.extend(["n/a", "n/a", "n/a"].map(String::from));
            } else {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                row.extend([mean, min, max].map(|v| format_percent(Some(v))));
            }
        }
        row.push(runs.len().to_string());
        out.extend(csv_line(&row)?);
    }
    Ok(String::from_utf8(out).expect("csv is utf-8"))
}
