use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lanechange::checkpoint::{Checkpoint, DatasetProvenance};
use lanechange::evaluation::{confusion, format_percent, metrics, MetricsReport, DEFAULT_THRESHOLD};
use lanechange::events::{build_dataset, Dataset, DatasetManifest, Label, WindowSpec};
use lanechange::experiments::{emit_figure_data, run_ablation, AblationSpec, BaseConfig, DataSource, RunOptions};
use lanechange::features::encode_windows;
use lanechange::nn::{predict, NetworkDims};
use lanechange::synthgen::{generate_recordings, write_output, SignalMode, SynthConfig};
use lanechange::training::train;
use lanechange::trajectory::{load_recordings, validate_tracks, ParseOptions, Recording, ValidationReport};
use log::info;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

const AFTER_HELP: &str = "\
Conventions:
  A window is labeled as a lane change when its probability is >= the
  threshold (default 0.5); ties count as lane changes.
  Every random choice derives from --seed. Without --seed the seed in the
  config file is used, and without that 0. Identical inputs and seeds give
  byte-identical outputs; wall-clock columns read n/a unless --timing.

Exit status: 0 success, 1 invalid input or usage, 2 internal error.";

#[derive(Parser, Debug)]
#[command(name = "lanechange", version, about = "Lane-change prediction with a two-layer LSTM", after_help = AFTER_HELP)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Master seed; overrides any seed in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only errors on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic recordings with ground-truth lane changes.
    #[command(after_help = AFTER_HELP)]
    Synth(SynthArgs),
    /// Parse recordings and print a JSON validation report to stdout.
    #[command(after_help = AFTER_HELP)]
    Validate(ValidateArgs),
    /// Extract a balanced, vehicle-disjoint window dataset.
    #[command(after_help = AFTER_HELP)]
    Extract(ExtractArgs),
    /// Train a model; writes a checkpoint and a per-epoch history CSV.
    #[command(after_help = AFTER_HELP)]
    Train(TrainArgs),
    /// Score a checkpoint; writes accuracy, precision and recall as CSV.
    #[command(after_help = AFTER_HELP)]
    Evaluate(EvaluateArgs),
    /// Run an ablation grid; writes per-run results and summary CSVs.
    #[command(after_help = AFTER_HELP)]
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Velocity,
    Acceleration,
    Both,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// JSON generator settings; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of recordings, numbered from 1.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Preset that decides which channels carry the class signal.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Directory with NN_tracks.csv files.
    dir: PathBuf,
    /// Treat frame gaps as parse errors.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// Directory with NN_tracks.csv files.
    dir: PathBuf,
    /// Output directory for manifest.json and windows/.
    #[arg(long)]
    out: PathBuf,
    /// Frames per window.
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Lane-keep windows end at least this many frames before a lane change.
    #[arg(long, default_value_t = 25)]
    horizon: usize,
    /// Fraction of windows in the training split.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON training config: data, dataset, features, hidden, train, window, split_fraction.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Recordings directory (overrides `data`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for model.ckpt and history.csv.
    #[arg(long)]
    out: PathBuf,
    /// Epochs (overrides `train.epochs`).
    #[arg(long)]
    epochs: Option<usize>,
    /// Write wall-clock seconds into history.csv.
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Recordings directory; the test split is rebuilt from the checkpoint's dataset settings.
    #[arg(long)]
    data: PathBuf,
    /// Extracted dataset directory to take the windows from instead.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Probability at or above which a window counts as a lane change.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// CSV output path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// JSON ablation spec.
    #[arg(long)]
    spec: PathBuf,
    /// Recordings directory (overrides the spec's source).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for results.csv and figure.csv.
    #[arg(long)]
    out: PathBuf,
    /// Write wall-clock seconds into results.csv.
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainFile {
    data: Option<PathBuf>,
    dataset: Option<PathBuf>,
    #[serde(flatten)]
    base: BaseConfig,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).map_err(|e| lanechange::Error::Io { path: path.into(), source: e })?;
    Ok(serde_json::from_str(&text)
        .map_err(lanechange::Error::from)
        .with_context(|| format!("reading {}", path.display()))?)
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| lanechange::Error::Io { path: dir.into(), source: e })?;
    }
    fs::write(path, bytes).map_err(|e| lanechange::Error::Io { path: path.into(), source: e })?;
    Ok(())
}

/// Resolves a seed: flag, then config file, then default.
fn pick_seed(flag: Option<u64>, file: Option<u64>, what: &str) -> u64 {
    match (flag, file) {
        (Some(s), _) => {
            info!("{what} seed {s} (from --seed)");
            s
        }
        (None, Some(s)) => {
            info!("{what} seed {s} (from config file)");
            s
        }
        (None, None) => {
            info!("{what} seed 0 (default)");
            0
        }
    }
}

fn synth(args: &SynthArgs, global: &Global) -> anyhow::Result<()> {
    let (mut config, file_seed) = match &args.config {
        Some(p) => {
            let value: serde_json::Value = read_json(p)?;
            let seed = value.get("seed").and_then(serde_json::Value::as_u64);
            (serde_json::from_value::<SynthConfig>(value).map_err(lanechange::Error::from)?, seed)
        }
        None => (SynthConfig::default(), None),
    };
    if let Some(mode) = args.mode {
        let seed = config.seed;
        config = match mode {
            ModeArg::Velocity => SynthConfig::velocity_signal(seed),
            ModeArg::Acceleration => SynthConfig::acceleration_signal(seed),
            ModeArg::Both => SynthConfig { signal_mode: SignalMode::Both, ..SynthConfig::velocity_signal(seed) },
        };
    }
    config.seed = pick_seed(global.seed, file_seed, "generator");
    let outputs = generate_recordings(&config, args.count)?;
    for out in &outputs {
        write_output(&args.out, out)?;
        info!(
            "recording {}: {} vehicles, {} lane changes",
            out.recording.id(),
            out.recording.tracks().len(),
            out.events.len()
        );
    }
    write_file(&args.out.join("synth_config.json"), (serde_json::to_string_pretty(&config)? + "\n").as_bytes())
}

#[derive(Serialize)]
struct RecordingReport {
    recording_id: u32,
    vehicles: usize,
    records: usize,
    #[serde(flatten)]
    report: ValidationReport,
}

fn validate(args: &ValidateArgs) -> anyhow::Result<bool> {
    let recordings = load_recordings(&args.dir, &ParseOptions { strict_gaps: args.strict })?;
    let reports: Vec<RecordingReport> = recordings
        .iter()
        .map(|r| RecordingReport {
            recording_id: r.id(),
            vehicles: r.tracks().len(),
            records: r.tracks().iter().map(|t| t.records.len()).sum(),
            report: validate_tracks(r.tracks(), &r.meta),
        })
        .collect();
    let clean = reports.iter().all(|r| r.report.is_clean());
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", serde_json::to_string_pretty(&reports)?)?;
    Ok(clean)
}

fn extract(args: &ExtractArgs, global: &Global) -> anyhow::Result<()> {
    let recordings = load_recordings(&args.dir, &ParseOptions::default())?;
    let seed = pick_seed(global.seed, None, "dataset");
    let spec = WindowSpec { n: args.n, stride: args.stride, horizon: args.horizon };
    let dataset = build_dataset(&recordings, &spec, seed, args.split)?;
    let manifest = DatasetManifest::new(&dataset, &spec, seed, args.split);
    manifest.write(&args.out, &dataset)?;
    info!(
        "{} train and {} test windows ({} events, {} too short, {} overlapping)",
        dataset.train.len(),
        dataset.test.len(),
        dataset.stats.events,
        dataset.stats.insufficient_history,
        dataset.stats.overlapping
    );
    Ok(())
}

fn load_dataset(recordings: &[Recording], manifest_dir: &Path) -> anyhow::Result<(Dataset, DatasetManifest)> {
    let manifest = DatasetManifest::read(&manifest_dir.join("manifest.json"))?;
    let dataset = manifest.resolve(recordings)?;
    Ok((dataset, manifest))
}

fn train_cmd(args: &TrainArgs, global: &Global) -> anyhow::Result<()> {
    let (mut file, file_seed): (TrainFile, Option<u64>) = match &args.config {
        Some(p) => {
            let value: serde_json::Value = read_json(p)?;
            let seed = value.pointer("/train/seed").and_then(serde_json::Value::as_u64);
            (serde_json::from_value(value).map_err(lanechange::Error::from)?, seed)
        }
        None => (TrainFile::default(), None),
    };
    if let Some(d) = &args.data {
        info!("data {} (from --data)", d.display());
        file.data = Some(d.clone());
    }
    if let Some(e) = args.epochs {
        info!("epochs {e} (from --epochs)");
        file.base.train.epochs = e;
    }
    let Some(data) = file.data.clone() else {
        bail!(lanechange::Error::InvalidConfig("no recordings given; set `data` or --data".into()))
    };
    let seed = pick_seed(global.seed, file_seed, "training");
    file.base.train.seed = seed;
    let base = &file.base;
    let features = base.features.clone().canonicalized()?;
    let recordings = load_recordings(&data, &ParseOptions::default())?;

    let (dataset, provenance) = match &file.dataset {
        Some(dir) => {
            let (ds, m) = load_dataset(&recordings, dir)?;
            (ds, DatasetProvenance { seed: m.seed, window: m.window, split_fraction: m.split_fraction })
        }
        None => {
            let ds = build_dataset(&recordings, &base.window, seed, base.split_fraction)?;
            (ds, DatasetProvenance { seed, window: base.window, split_fraction: base.split_fraction })
        }
    };
    if provenance.window.n != features.n {
        bail!(lanechange::Error::InvalidConfig(format!(
            "window length {} differs from feature n {}",
            provenance.window.n, features.n
        )));
    }
    let (train_seqs, test_seqs, manifest) = lanechange::features::prepare_split(
        &dataset.train,
        &dataset.test,
        &features,
        provenance.window.stride,
        &recordings,
    )?;
    let dims = NetworkDims::new(features.width(), base.hidden);
    info!("training {} cells on {} windows ({} test)", base.hidden, train_seqs.len(), test_seqs.len());
    let (params, history) = train(&train_seqs, &dims, &base.train, None)?;
    let test = lanechange::training::evaluate(&params, &test_seqs)?;
    info!("test accuracy / precision / recall: {test}");

    let checkpoint = Checkpoint::new(&params, seed, manifest, Some(provenance));
    fs::create_dir_all(&args.out).map_err(|e| lanechange::Error::Io { path: args.out.clone(), source: e })?;
    checkpoint.save(&args.out.join("model.ckpt"))?;
    write_file(&args.out.join("history.csv"), history.to_csv(args.timing).as_bytes())?;
    write_file(&args.out.join("train_config.json"), (serde_json::to_string_pretty(&file)? + "\n").as_bytes())
}

fn metrics_csv(m: &MetricsReport, threshold: f64, windows: usize) -> String {
    let c = m.counts;
    format!(
        "accuracy,precision,recall,tp,fp,tn,fn,threshold,windows\n{},{},{},{},{},{},{},{},{}\n",
        format_percent(m.accuracy),
        format_percent(m.precision),
        format_percent(m.recall),
        c.tp,
        c.fp,
        c.tn,
        c.fn_,
        threshold,
        windows
    )
}

fn evaluate_cmd(args: &EvaluateArgs) -> anyhow::Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let recordings = load_recordings(&args.data, &ParseOptions::default())?;
    let dataset = match &args.dataset {
        Some(dir) => load_dataset(&recordings, dir)?.0,
        None => {
            let Some(p) = &checkpoint.envelope.dataset else {
                bail!(lanechange::Error::Checkpoint("no dataset settings recorded; pass --dataset".into()))
            };
            build_dataset(&recordings, &p.window, p.seed, p.split_fraction)?
        }
    };
    let windows: Vec<_> = match args.split {
        SplitArg::Train => dataset.train,
        SplitArg::Test => dataset.test,
        SplitArg::All => dataset.train.into_iter().chain(dataset.test).collect(),
    };
    let manifest = &checkpoint.envelope.feature_manifest;
    let seqs = encode_windows(&windows, &manifest.config(), &recordings)?;
    let mut probs = Vec::with_capacity(seqs.len());
    for s in &seqs {
        probs.push(predict(&manifest.prepare(s)?, &checkpoint.params)?);
    }
    let labels: Vec<Label> = seqs.iter().map(|s| s.label).collect();
    let report = metrics(&confusion(&probs, &labels, args.threshold)?);
    info!("accuracy / precision / recall: {report}");
    let csv = metrics_csv(&report, args.threshold, seqs.len());
    match &args.out {
        Some(p) => write_file(p, csv.as_bytes()),
        None => Ok(std::io::stdout().lock().write_all(csv.as_bytes())?),
    }
}

fn ablate(args: &AblateArgs, global: &Global) -> anyhow::Result<()> {
    let value: serde_json::Value = read_json(&args.spec)?;
    let file_seed = value.get("master_seed").and_then(serde_json::Value::as_u64);
    let mut spec: AblationSpec = serde_json::from_value(value).map_err(lanechange::Error::from)?;
    spec.master_seed = pick_seed(global.seed, file_seed, "master");
    if let Some(d) = &args.data {
        info!("data {} (from --data)", d.display());
        spec.source = DataSource::Recordings { dir: d.clone() };
    }
    spec.check()?;
    let recordings = spec.source.load()?;
    let results = run_ablation(
        &spec,
        &recordings,
        Some(&args.out.join("results.csv")),
        RunOptions { record_timing: args.timing },
    )?;
    write_file(&args.out.join("figure.csv"), emit_figure_data(&results, spec.axis)?.as_bytes())?;
    let failed = results.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {} runs failed; see results.csv", results.len());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let g = &cli.global;
    if let Some(jobs) = g.jobs {
        if jobs == 0 {
            bail!(lanechange::Error::InvalidConfig("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().context("configuring worker threads")?;
    }
    match &cli.command {
        Command::Synth(a) => synth(a, g)?,
        Command::Validate(a) => {
            if !validate(a)? {
                log::warn!("validation found violations");
            }
        }
        Command::Extract(a) => extract(a, g)?,
        Command::Train(a) => train_cmd(a, g)?,
        Command::Evaluate(a) => evaluate_cmd(a)?,
        Command::Ablate(a) => ablate(a, g)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<lanechange::Error>() {
        Some(e) if !e.is_user_error() => 2,
        Some(_) => 1,
        None if err.downcast_ref::<std::io::Error>().is_some() => 1,
        None => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match (cli.global.quiet, cli.global.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        (false, _) => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).target(env_logger::Target::Stderr).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
