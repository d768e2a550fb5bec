//! The `dhmp` command line: dataset generation, training, evaluation,
//! ablation sweeps and export of plot-ready files.
//!
//! Every command writes into `--out`, refuses a non-empty directory unless
//! `--force` is given, and finishes by writing `run_manifest.json`. Exit
//! codes: 0 success, 2 user or config error, 3 IO error, 4 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blob::sha256_hex;
use crate::mesh::NodeType;
use crate::model::{ModelConfig, ModelError, Variant};
use crate::noise::{KeyedNoise, SelectionNoise, ZeroNoise};
use crate::oracle::{
    make_dataset, Dataset, DatasetConfig, NormStats, OracleError, Split, Trajectory,
};
use crate::trainer::{
    evaluate_repeated, load_checkpoint, run_ablation, run_ksweep, run_training, EvalOptions,
    ExperimentSpec, ModelPredictor, Predictor, TrainConfig, TrainError, Trainer,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Io(io) => CliError::Io(io),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io(io) => CliError::Io(io),
            TrainError::Oracle(o) => o.into(),
            e @ TrainError::Numeric { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        TrainError::from(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Usage(format!("json: {e}"))
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(
    name = "dhmp",
    version,
    about = "Dynamic hierarchical message passing for mesh-based physics"
)]
pub struct Cli {
    /// Seed of the command: dataset seed for gen-data, train/init seed for
    /// train, eval seed for eval and export, first of three seeds for sweeps.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replace the contents of an existing output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// JSON config with optional `dataset`, `model`, `train` and `eval`
    /// sections; absent fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural dataset.
    GenData,
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Train and score every variant with several seeds.
    Ablate(SweepArgs),
    /// Train and score DHMP over several hop counts.
    Ksweep(KsweepArgs),
    /// Write CSV files describing predictions and hierarchies.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Total optimizer steps (overrides the config).
    #[arg(long)]
    pub steps: Option<u64>,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop (with a checkpoint) once this many steps are done.
    #[arg(long)]
    pub stop_after: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Argmax node selection instead of sampling.
    #[arg(long)]
    pub deterministic_select: bool,
    /// Evaluate the high-resolution held-out split.
    #[arg(long, conflicts_with = "split")]
    pub ood: bool,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated variants.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant, default_values_t = Variant::ALL)]
    pub variants: Vec<Variant>,
    /// Comma-separated seeds; defaults to three consecutive seeds from `--seed`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct KsweepArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4])]
    pub ks: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 0)]
    pub trajectory: usize,
    /// Comma-separated time steps; defaults to first, middle and last.
    #[arg(long, value_delimiter = ',')]
    pub time_steps: Vec<usize>,
    #[arg(long)]
    pub deterministic_select: bool,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

/// Schema of `--config` files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let bytes = fs::read(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Self-description of one invocation, written last into the output
/// directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub out: String,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub exit_code: i32,
    pub error: Option<String>,
    /// Every file written by the run except this manifest, sorted by path.
    pub artifacts: Vec<Artifact>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Creates `out`, clearing it first when `force` is set. Only directories
/// that are empty or hold a previous run manifest are ever cleared.
fn prepare_out(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let occupied = fs::read_dir(out)?.next().is_some();
        if occupied {
            if !force {
                return Err(CliError::Usage(format!(
                    "output directory {} is not empty; pass --force to replace it",
                    out.display()
                )));
            }
            if !out.join(MANIFEST_FILE).exists() {
                return Err(CliError::Usage(format!(
                    "refusing to clear {}: it was not written by dhmp",
                    out.display()
                )));
            }
            fs::remove_dir_all(out)?;
        }
    }
    fs::create_dir_all(out)?;
    Ok(())
}

fn collect_artifacts(root: &Path, dir: &Path, acc: &mut Vec<Artifact>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_artifacts(root, &path, acc)?;
        } else if path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            let rel = path.strip_prefix(root).unwrap_or(&path);
            acc.push(Artifact {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: sha256_hex(&fs::read(&path)?),
            });
        }
    }
    Ok(())
}

struct Run {
    config: RunConfig,
    seeds: Vec<u64>,
    inputs: Vec<String>,
}

fn split_arg(s: &str) -> Result<Split> {
    s.parse::<Split>()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn open_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.join("manifest.json").exists() {
        return Err(CliError::Usage(format!(
            "{} holds no dataset manifest",
            dir.display()
        )));
    }
    Ok(Dataset::open(dir)?)
}

fn dataset_sha(dir: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(dir.join("manifest.json"))?))
}

/// Fills the data-dependent widths of the model config.
fn fit_widths(model: &mut ModelConfig, norm: &NormStats) {
    model.node_input = norm.inputs.width() + NodeType::COUNT;
    model.output = norm.targets.width();
}

fn sweep_seeds(seed: u64, given: &[u64]) -> Vec<u64> {
    if given.is_empty() {
        vec![seed, seed + 1, seed + 2]
    } else {
        given.to_vec()
    }
}

fn cmd_gen_data(cli: &Cli, out: &Path, config: RunConfig) -> Result<Run> {
    config.dataset.validate()?;
    make_dataset(&config.dataset, cli.seed, out)?;
    let ds = Dataset::open(out)?;
    ds.verify()?;
    Ok(Run {
        config,
        seeds: vec![cli.seed],
        inputs: vec![],
    })
}

fn cmd_train(cli: &Cli, args: &TrainArgs, out: &Path, mut config: RunConfig) -> Result<Run> {
    let ds = open_dataset(&args.dataset)?;
    let sha = dataset_sha(&args.dataset)?;
    let mut inputs = vec![args.dataset.display().to_string()];
    let trainer = match &args.resume {
        Some(path) => {
            let (header, mut trainer) = load_checkpoint(path)?;
            if header.dataset_sha256.as_deref().is_some_and(|s| s != sha) {
                return Err(CliError::Usage(format!(
                    "checkpoint {} was trained on a different dataset",
                    path.display()
                )));
            }
            if let Some(steps) = args.steps {
                trainer.config.total_steps = steps;
                trainer.config.validate()?;
            }
            inputs.push(path.display().to_string());
            config.model = trainer.model.config.clone();
            config.train = trainer.config.clone();
            trainer
        }
        None => {
            if let Some(v) = args.variant {
                config.model.variant = v;
            }
            if let Some(steps) = args.steps {
                config.train.total_steps = steps;
            }
            config.train.seed = cli.seed;
            config.model.init_seed = cli.seed;
            fit_widths(&mut config.model, ds.norm_stats());
            Trainer::new(
                config.model.clone(),
                config.train.clone(),
                ds.norm_stats().clone(),
            )?
        }
    };
    let train = ds.load(Split::Train)?;
    let val = ds.load(Split::Val)?;
    let eval = EvalOptions {
        horizon: config.eval.horizon.min(max_horizon(&val)),
        ..config.eval
    };
    config.eval = eval;
    let outcome = run_training(
        trainer,
        &train,
        &val,
        &eval,
        Some(&sha),
        args.stop_after,
        out,
    )?;
    eprintln!(
        "trained {} steps: final loss {:.4e}, val rmse_1 {:.4e} (zero-delta {:.4e})",
        outcome.report.steps,
        outcome.report.final_loss,
        outcome.report.val.rmse_1,
        outcome.report.zero_delta_val.rmse_1
    );
    Ok(Run {
        config,
        seeds: vec![cli.seed],
        inputs,
    })
}

fn max_horizon(trajs: &[Trajectory]) -> usize {
    trajs.iter().map(|t| t.steps - 1).min().unwrap_or(0)
}

/// Loads a checkpoint and checks it against the dataset it is applied to.
fn checkpoint_for(path: &Path, ds: &Dataset, ds_dir: &Path) -> Result<Trainer> {
    let (header, trainer) = load_checkpoint(path)?;
    if let Some(expected) = &header.dataset_sha256 {
        if *expected != dataset_sha(ds_dir)? {
            return Err(CliError::Usage(format!(
                "checkpoint {} does not match dataset {} (manifest hash differs)",
                path.display(),
                ds_dir.display()
            )));
        }
    }
    if trainer.norm.inputs.width() != ds.norm_stats().inputs.width() {
        return Err(CliError::Usage(
            "checkpoint and dataset have different input channels".into(),
        ));
    }
    Ok(trainer)
}

fn cmd_eval(cli: &Cli, args: &EvalArgs, out: &Path, mut config: RunConfig) -> Result<Run> {
    let ds = open_dataset(&args.dataset)?;
    let trainer = checkpoint_for(&args.checkpoint, &ds, &args.dataset)?;
    let split = if args.ood {
        Split::Ood
    } else {
        split_arg(&args.split)?
    };
    let data = ds.load(split)?;
    let opts = EvalOptions {
        horizon: args.horizon.unwrap_or_else(|| max_horizon(&data)),
        deterministic: args.deterministic_select,
        seed: cli.seed,
    };
    let predictor = ModelPredictor {
        model: &trainer.model,
        norm: &trainer.norm,
        temperature: trainer.config.tau_min,
    };
    let report = evaluate_repeated(&predictor, &data, &opts, args.repeats)?;
    let body = serde_json::json!({
        "split": split.name(),
        "checkpoint_step": trainer.step,
        "rmse_1": report.rmse_1,
        "rmse_all": report.rmse_all,
        "runs": report.runs,
    });
    fs::write(out.join("report.json"), serde_json::to_vec_pretty(&body)?)?;
    eprintln!(
        "{} split: rmse_1 {:.4e} ± {:.2e}, rmse_all {:.4e} ± {:.2e} over {} run(s)",
        split,
        report.rmse_1.mean,
        report.rmse_1.std,
        report.rmse_all.mean,
        report.rmse_all.std,
        report.runs.len()
    );
    config.model = trainer.model.config.clone();
    config.train = trainer.config.clone();
    config.eval = opts;
    Ok(Run {
        config,
        seeds: (0..args.repeats.max(1) as u64)
            .map(|r| cli.seed + r)
            .collect(),
        inputs: vec![
            args.checkpoint.display().to_string(),
            args.dataset.display().to_string(),
        ],
    })
}

fn sweep_setup(
    dataset: &Path,
    steps: Option<u64>,
    config: &mut RunConfig,
) -> Result<(Dataset, Vec<Trajectory>, Vec<Trajectory>)> {
    let ds = open_dataset(dataset)?;
    if let Some(s) = steps {
        config.train.total_steps = s;
    }
    config.train.checkpoint_interval = 0;
    fit_widths(&mut config.model, ds.norm_stats());
    let train = ds.load(Split::Train)?;
    let test = ds.load(Split::Test)?;
    config.eval.horizon = config.eval.horizon.min(max_horizon(&test));
    Ok((ds, train, test))
}

fn write_table(out: &Path, table: &crate::trainer::ComparisonTable) -> Result<()> {
    fs::write(out.join("table.csv"), table.to_csv()?)?;
    fs::write(out.join("table.json"), serde_json::to_vec_pretty(table)?)?;
    print!("{}", table.to_csv()?);
    Ok(())
}

fn progress(label: &str, seed: u64, r1: f64, ra: f64) {
    eprintln!("{label} seed {seed}: rmse_1 {r1:.4e}, rmse_all {ra:.4e}");
}

fn cmd_ablate(cli: &Cli, args: &SweepArgs, out: &Path, mut config: RunConfig) -> Result<Run> {
    let (ds, train, test) = sweep_setup(&args.dataset, args.steps, &mut config)?;
    let seeds = sweep_seeds(cli.seed, &args.seeds);
    let spec = ExperimentSpec {
        model: config.model.clone(),
        train: config.train.clone(),
        eval: config.eval,
    };
    let table = run_ablation(
        &spec,
        &args.variants,
        &seeds,
        &train,
        &test,
        ds.norm_stats(),
        &mut progress,
    )?;
    write_table(out, &table)?;
    Ok(Run {
        config,
        seeds,
        inputs: vec![args.dataset.display().to_string()],
    })
}

fn cmd_ksweep(cli: &Cli, args: &KsweepArgs, out: &Path, mut config: RunConfig) -> Result<Run> {
    let (ds, train, test) = sweep_setup(&args.dataset, args.steps, &mut config)?;
    let seeds = sweep_seeds(cli.seed, &args.seeds);
    let spec = ExperimentSpec {
        model: config.model.clone(),
        train: config.train.clone(),
        eval: config.eval,
    };
    let table = run_ksweep(
        &spec,
        &args.ks,
        &seeds,
        &train,
        &test,
        ds.norm_stats(),
        &mut progress,
    )?;
    write_table(out, &table)?;
    Ok(Run {
        config,
        seeds,
        inputs: vec![args.dataset.display().to_string()],
    })
}

fn cmd_export(cli: &Cli, args: &ExportArgs, out: &Path, mut config: RunConfig) -> Result<Run> {
    let ds = open_dataset(&args.dataset)?;
    let trainer = checkpoint_for(&args.checkpoint, &ds, &args.dataset)?;
    let split = split_arg(&args.split)?;
    let data = ds.load(split)?;
    let tr = data.get(args.trajectory).ok_or_else(|| {
        CliError::Usage(format!(
            "split {split} has {} trajectories, asked for index {}",
            data.len(),
            args.trajectory
        ))
    })?;
    let last = tr.steps - 2;
    let steps = if args.time_steps.is_empty() {
        let mut s = vec![0, last / 2, last];
        s.dedup();
        s
    } else {
        args.time_steps.clone()
    };
    if let Some(&bad) = steps.iter().find(|&&t| t > last) {
        return Err(CliError::Usage(format!(
            "time step {bad} is past the last transition {last}"
        )));
    }
    let predictor = ModelPredictor {
        model: &trainer.model,
        norm: &trainer.norm,
        temperature: trainer.config.tau_min,
    };
    for &t in &steps {
        let noise: Box<dyn SelectionNoise> = if args.deterministic_select {
            Box::new(ZeroNoise)
        } else {
            Box::new(KeyedNoise::new(cli.seed, t as u64))
        };
        let prediction = predictor.predict(tr, tr.state(t), noise.as_ref())?;
        crate::export::write_step(out, tr, t, &prediction)?;
    }
    crate::export::write_readme(out, split, args.trajectory, &steps)?;
    config.model = trainer.model.config.clone();
    config.train = trainer.config.clone();
    Ok(Run {
        config,
        seeds: vec![cli.seed],
        inputs: vec![
            args.checkpoint.display().to_string(),
            args.dataset.display().to_string(),
        ],
    })
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenData => "gen-data",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Ablate(_) => "ablate",
        Command::Ksweep(_) => "ksweep",
        Command::Export(_) => "export",
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli, argv: Vec<String>) -> i32 {
    let started = now();
    let name = command_name(&cli.command);
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("dhmp-{name}")));
    if let Err(e) = prepare_out(&out, cli.force) {
        return report_error(&e);
    }
    let loaded = RunConfig::load(cli.config.as_deref());
    let config = loaded.as_ref().cloned().unwrap_or_default();
    let result = loaded.and_then(|config| match &cli.command {
        Command::GenData => cmd_gen_data(cli, &out, config),
        Command::Train(a) => cmd_train(cli, a, &out, config),
        Command::Eval(a) => cmd_eval(cli, a, &out, config),
        Command::Ablate(a) => cmd_ablate(cli, a, &out, config),
        Command::Ksweep(a) => cmd_ksweep(cli, a, &out, config),
        Command::Export(a) => cmd_export(cli, a, &out, config),
    });
    let (code, error, run) = match result {
        Ok(run) => (EXIT_OK, None, Some(run)),
        Err(e) => (e.exit_code(), Some(e.to_string()), None),
    };
    let mut artifacts = Vec::new();
    if let Err(e) = collect_artifacts(&out, &out, &mut artifacts) {
        return report_error(&CliError::Io(e));
    }
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    let (config, seeds, inputs) = match run {
        Some(r) => (r.config, r.seeds, r.inputs),
        None => (config, vec![cli.seed], vec![]),
    };
    let manifest = RunManifest {
        command: name.to_string(),
        argv,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        seeds,
        inputs,
        out: out.display().to_string(),
        started_unix_s: started,
        finished_unix_s: now(),
        exit_code: code,
        error: error.clone(),
        artifacts,
    };
    let written = serde_json::to_vec_pretty(&manifest)
        .map_err(CliError::from)
        .and_then(|b| fs::write(out.join(MANIFEST_FILE), b).map_err(CliError::from));
    if let Err(e) = written {
        return report_error(&e);
    }
    if let Some(msg) = error {
        eprintln!("error: {msg}");
    }
    code
}

fn report_error(e: &CliError) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}

/// Parses `std::env::args` and runs; the binary's whole body.
pub fn main() -> i32 {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    run(&cli, argv)
}
