use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    evaluate, save_checkpoint, temperature_schedule, EvalOptions, MeanStd, MetricsReport,
    ModelPredictor, Result, StepReport, TrainConfig, TrainError, Trainer, ZeroDelta,
};
use crate::model::{ModelConfig, Variant};
use crate::oracle::{NormStats, Trajectory};

/// Everything that defines one training run and its evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: u64,
    /// Mean loss over the last (up to) 100 steps of this run.
    pub final_loss: f64,
    pub wall_clock_s: f64,
    pub val: MetricsReport,
    pub zero_delta_val: MetricsReport,
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub report: TrainReport,
}

#[derive(Serialize)]
struct EvalLine {
    kind: &'static str,
    step: u64,
    val_rmse_1: f64,
}

fn metrics_line(r: &StepReport) -> Result<String> {
    Ok(serde_json::to_string(r)?)
}

/// Trains `trainer` on `train` until its configured step count (or
/// `stop_after`, if smaller), streaming `metrics.jsonl` and checkpoints to
/// `out`, then evaluates on `val` and writes `report.json` and
/// `checkpoint.ckpt`. A numeric failure leaves `failure.json` behind.
pub fn run_training(
    mut trainer: Trainer,
    train: &[Trajectory],
    val: &[Trajectory],
    eval: &EvalOptions,
    dataset_sha256: Option<&str>,
    stop_after: Option<u64>,
    out: &Path,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    fs::create_dir_all(out.join("checkpoints"))?;
    let mut log = BufWriter::new(fs::File::create(out.join("metrics.jsonl"))?);
    let end = stop_after.map_or(trainer.config.total_steps, |s| {
        s.min(trainer.config.total_steps)
    });
    let mut recent = std::collections::VecDeque::with_capacity(100);
    let quick = EvalOptions {
        horizon: 0,
        deterministic: true,
        ..*eval
    };
    while trainer.step < end {
        let report = match trainer.train_step(train) {
            Ok(r) => r,
            Err(e) => {
                log.flush()?;
                let diag = serde_json::json!({
                    "step": trainer.step,
                    "tau": temperature_schedule(trainer.step, &trainer.config),
                    "error": e.to_string(),
                });
                fs::write(out.join("failure.json"), serde_json::to_vec_pretty(&diag)?)?;
                return Err(e);
            }
        };
        writeln!(log, "{}", metrics_line(&report)?)?;
        if recent.len() == 100 {
            recent.pop_front();
        }
        recent.push_back(report.loss);
        let done = trainer.step;
        let cfg = &trainer.config;
        if cfg.eval_interval > 0 && done.is_multiple_of(cfg.eval_interval) && !val.is_empty() {
            let predictor = ModelPredictor {
                model: &trainer.model,
                norm: &trainer.norm,
                temperature: cfg.tau_min,
            };
            let m = evaluate(&predictor, val, &quick)?;
            let line = EvalLine {
                kind: "eval",
                step: done,
                val_rmse_1: m.rmse_1,
            };
            writeln!(log, "{}", serde_json::to_string(&line)?)?;
        }
        if cfg.checkpoint_interval > 0 && done.is_multiple_of(cfg.checkpoint_interval) {
            let path = out.join("checkpoints").join(format!("step_{done:07}.ckpt"));
            save_checkpoint(&trainer, dataset_sha256, &path)?;
        }
    }
    log.flush()?;
    save_checkpoint(&trainer, dataset_sha256, &out.join("checkpoint.ckpt"))?;
    let predictor = ModelPredictor {
        model: &trainer.model,
        norm: &trainer.norm,
        temperature: trainer.config.tau_min,
    };
    let report = TrainReport {
        steps: trainer.step,
        final_loss: recent.iter().sum::<f64>() / recent.len().max(1) as f64,
        wall_clock_s: start.elapsed().as_secs_f64(),
        val: evaluate(&predictor, val, eval)?,
        zero_delta_val: evaluate(&ZeroDelta, val, eval)?,
    };
    fs::write(out.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    Ok(TrainOutcome { trainer, report })
}

/// One row of a comparison table: a configuration trained with several
/// seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub variant: Variant,
    pub hops: usize,
    pub rmse_1: MeanStd,
    pub rmse_all: MeanStd,
    /// `(seed, rmse_1, rmse_all)` of every run.
    pub runs: Vec<(u64, f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<AblationRow>,
}

impl ComparisonTable {
    pub const HEADER: [&'static str; 7] = [
        "model",
        "rmse_1_mean",
        "rmse_1_std",
        "rmse_all_mean",
        "rmse_all_std",
        "seeds",
        "hops",
    ];

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| TrainError::Io(std::io::Error::other(e));
        w.write_record(Self::HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                format!("{:.6e}", r.rmse_1.mean),
                format!("{:.6e}", r.rmse_1.std),
                format!("{:.6e}", r.rmse_all.mean),
                format!("{:.6e}", r.rmse_all.std),
                r.runs.len().to_string(),
                r.hops.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| TrainError::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn train_and_score(
    spec: &ExperimentSpec,
    train: &[Trajectory],
    eval_set: &[Trajectory],
    norm: &NormStats,
) -> Result<(f64, f64)> {
    let mut trainer = Trainer::new(spec.model.clone(), spec.train.clone(), norm.clone())?;
    trainer.fit(train, |_, _| Ok(()))?;
    let predictor = ModelPredictor {
        model: &trainer.model,
        norm,
        temperature: spec.train.tau_min,
    };
    let m = evaluate(&predictor, eval_set, &spec.eval)?;
    Ok((m.rmse_1, m.rmse_all))
}

fn sweep(
    configs: Vec<(String, ExperimentSpec)>,
    seeds: &[u64],
    train: &[Trajectory],
    eval_set: &[Trajectory],
    norm: &NormStats,
    progress: &mut dyn FnMut(&str, u64, f64, f64),
) -> Result<ComparisonTable> {
    if seeds.is_empty() || configs.is_empty() {
        return Err(TrainError::Config(
            "a sweep needs at least one configuration and one seed".into(),
        ));
    }
    let mut rows = Vec::with_capacity(configs.len());
    for (label, spec) in configs {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut s = spec.clone();
            s.model.init_seed = seed;
            s.train.seed = seed;
            let (r1, ra) = train_and_score(&s, train, eval_set, norm)?;
            progress(&label, seed, r1, ra);
            runs.push((seed, r1, ra));
        }
        let col =
            |f: fn(&(u64, f64, f64)) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
        rows.push(AblationRow {
            label,
            variant: spec.model.variant,
            hops: spec.model.hops,
            rmse_1: col(|r| r.1),
            rmse_all: col(|r| r.2),
            runs,
        });
    }
    Ok(ComparisonTable { rows })
}

/// Trains every variant with every seed under the same budget and scores
/// each on `eval_set`.
pub fn run_ablation(
    base: &ExperimentSpec,
    variants: &[Variant],
    seeds: &[u64],
    train: &[Trajectory],
    eval_set: &[Trajectory],
    norm: &NormStats,
    progress: &mut dyn FnMut(&str, u64, f64, f64),
) -> Result<ComparisonTable> {
    let configs = variants
        .iter()
        .map(|&v| {
            let mut s = base.clone();
            s.model.variant = v;
            (v.description().to_string(), s)
        })
        .collect();
    sweep(configs, seeds, train, eval_set, norm, progress)
}

/// DHMP with each edge-enhancement hop count in `ks`.
pub fn run_ksweep(
    base: &ExperimentSpec,
    ks: &[usize],
    seeds: &[u64],
    train: &[Trajectory],
    eval_set: &[Trajectory],
    norm: &NormStats,
    progress: &mut dyn FnMut(&str, u64, f64, f64),
) -> Result<ComparisonTable> {
    let configs = ks
        .iter()
        .map(|&k| {
            let mut s = base.clone();
            s.model.variant = Variant::Dhmp;
            s.model.hops = k;
            (format!("K={k}"), s)
        })
        .collect();
    sweep(configs, seeds, train, eval_set, norm, progress)
}
