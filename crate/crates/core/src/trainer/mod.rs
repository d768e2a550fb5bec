//! One-step supervised training, evaluation and experiment harnesses.

mod checkpoint;
mod eval;
mod harness;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use eval::{
    evaluate, evaluate_repeated, EvalOptions, HierarchyStats, MeanStd, MetricsReport,
    ModelPredictor, OraclePredictor, Prediction, Predictor, RepeatedReport, ZeroDelta,
};
pub use harness::{
    run_ablation, run_ksweep, run_training, AblationRow, ComparisonTable, ExperimentSpec,
    TrainOutcome,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Adam, AutodiffError, Matrix, Tape, Tensor};
use crate::mesh::NodeType;
use crate::model::{
    node_input_matrix, ForwardOptions, HierarchyLevel, Model, ModelConfig, ModelError,
};
use crate::noise::{mix, stream, KeyedNoise};
use crate::oracle::{NormStats, OracleError, Trajectory};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(
        "non-finite value at step {step} (tau {tau:.4}, lr {lr:.3e}, nodes per level {nodes_per_level:?}): {detail}"
    )]
    Numeric {
        step: u64,
        tau: f64,
        lr: f64,
        nodes_per_level: Vec<usize>,
        detail: String,
    },
    #[error("horizon {horizon} exceeds the {available} transitions of trajectory {trajectory}")]
    Horizon {
        horizon: usize,
        available: usize,
        trajectory: usize,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("incompatible checkpoint and dataset: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Model(ModelError::Autodiff(e))
    }
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    /// Samples per optimizer step; gradients are averaged.
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub tau_start: f64,
    pub tau_min: f64,
    pub tau_decay: f64,
    /// Input noise std as a fraction of each dynamic channel's data std.
    pub noise_scale: f64,
    pub seed: u64,
    /// Validation RMSE-1 every this many steps; 0 disables.
    pub eval_interval: u64,
    /// Intermediate checkpoints every this many steps; 0 disables.
    pub checkpoint_interval: u64,
    /// Gate REDUCE with the relaxed keep probability (exact gradients of
    /// the computed loss, for gradient checks).
    pub soft_gate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 20_000,
            batch_size: 1,
            lr_start: 1e-4,
            lr_end: 1e-6,
            tau_start: 5.0,
            tau_min: 0.1,
            tau_decay: 0.999,
            noise_scale: 0.02,
            seed: 0,
            eval_interval: 0,
            checkpoint_interval: 5_000,
            soft_gate: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.total_steps == 0 || self.batch_size == 0 {
            return bad("total_steps and batch_size must be positive");
        }
        if !(self.lr_end > 0.0 && self.lr_end < self.lr_start) {
            return bad("learning rates must satisfy 0 < lr_end < lr_start");
        }
        if !(self.tau_min > 0.0 && self.tau_min < self.tau_start) {
            return bad("temperatures must satisfy 0 < tau_min < tau_start");
        }
        if !(self.tau_decay > 0.0 && self.tau_decay < 1.0) {
            return bad("tau_decay must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.noise_scale) {
            return bad("noise_scale must lie in [0, 1)");
        }
        Ok(())
    }
}

/// `lr_start * (lr_end / lr_start)^(step / total_steps)`, held at `lr_end`
/// past the end.
pub fn lr_schedule(step: u64, config: &TrainConfig) -> f64 {
    let frac = step.min(config.total_steps) as f64 / config.total_steps as f64;
    config.lr_start * (config.lr_end / config.lr_start).powf(frac)
}

/// `max(tau_min, tau_start * tau_decay^step)`.
pub fn temperature_schedule(step: u64, config: &TrainConfig) -> f64 {
    (config.tau_start * config.tau_decay.powf(step as f64)).max(config.tau_min)
}

/// A training pair: state `t` of a trajectory and its successor.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub trajectory: &'a Trajectory,
    pub t: usize,
}

const SAMPLE_KEY: u64 = 0x5a;
const INPUT_NOISE_KEY: u64 = 0x1f;
const GUMBEL_KEY: u64 = 0x6b;

/// The `b`-th sample of optimizer step `step`, uniform over all transitions.
pub fn draw_sample<'a>(data: &'a [Trajectory], seed: u64, step: u64, b: usize) -> Sample<'a> {
    let mut rng = stream(seed, &[SAMPLE_KEY, step, b as u64]);
    let trajectory = &data[rng.gen_range(0..data.len())];
    let t = rng.gen_range(0..trajectory.steps - 1);
    Sample { trajectory, t }
}

/// Normalised model input for physical field values `u`.
pub fn model_inputs(tr: &Trajectory, u: &[f64], norm: &NormStats) -> Matrix {
    let mut x = tr.inputs_for(u);
    norm.inputs.normalize(&mut x.data);
    node_input_matrix(&x, &tr.mesh.node_types)
}

#[derive(Debug, Clone, Serialize)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub tau: f64,
    /// Nodes per level, input mesh first (of the last sample in the batch).
    pub nodes_kept: Vec<usize>,
}

fn nodes_per_level(first: usize, levels: &[HierarchyLevel]) -> Vec<usize> {
    std::iter::once(first)
        .chain(levels.iter().map(|l| l.kept()))
        .collect()
}

/// Model, optimizer state and step counter.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    pub config: TrainConfig,
    pub norm: NormStats,
    /// Completed optimizer steps.
    pub step: u64,
}

impl Trainer {
    pub fn new(model_config: ModelConfig, config: TrainConfig, norm: NormStats) -> Result<Self> {
        config.validate()?;
        let expected = norm.inputs.width() + NodeType::COUNT;
        if model_config.node_input != expected || model_config.output != norm.targets.width() {
            return Err(TrainError::Config(format!(
                "model widths {}->{} do not match the data ({}->{})",
                model_config.node_input,
                model_config.output,
                expected,
                norm.targets.width()
            )));
        }
        let mut model = Model::new(model_config)?;
        model.set_edge_norm(norm.edges.clone())?;
        let adam = Adam::new(&model.params);
        Ok(Trainer {
            model,
            adam,
            config,
            norm,
            step: 0,
        })
    }

    /// Records the normalised MSE of one sample on `tape`. Input noise and
    /// Gumbel noise are keyed by `(seed, step, b)`.
    pub fn sample_loss(
        &self,
        tape: &mut Tape,
        bp: &crate::autodiff::BoundParams,
        sample: Sample,
        step: u64,
        b: usize,
    ) -> Result<(Tensor, Vec<HierarchyLevel>)> {
        let tr = sample.trajectory;
        let mut u = tr.state(sample.t).to_vec();
        if self.config.noise_scale > 0.0 {
            let mut rng = stream(self.config.seed, &[INPUT_NOISE_KEY, step, b as u64]);
            let pinned = tr.pinned();
            for (k, v) in u.iter_mut().enumerate() {
                let (node, ch) = (k / tr.channels, k % tr.channels);
                if !pinned[node] {
                    let sd = self.config.noise_scale * self.norm.inputs.std[ch];
                    *v += Normal::new(0.0, sd).expect("finite std").sample(&mut rng);
                }
            }
        }
        let x = model_inputs(tr, &u, &self.norm);
        let mut target = tr.delta(sample.t);
        self.norm.targets.normalize(&mut target);
        let target = tape.constant(Matrix::from_vec(tr.node_count(), tr.channels, target))?;
        let noise = KeyedNoise::new(mix(self.config.seed, &[GUMBEL_KEY, b as u64]), step);
        let opts = ForwardOptions {
            temperature: temperature_schedule(step, &self.config),
            soft_gate: self.config.soft_gate,
        };
        let out = self.model.forward(tape, bp, &tr.mesh, &x, &opts, &noise)?;
        let loss = tape.mse(out.prediction, target)?;
        Ok((loss, out.levels))
    }

    /// One optimizer step on samples drawn from `data`.
    pub fn train_step(&mut self, data: &[Trajectory]) -> Result<StepReport> {
        if data.is_empty() {
            return Err(TrainError::Config("no training trajectories".into()));
        }
        let step = self.step;
        let lr = lr_schedule(step, &self.config);
        let tau = temperature_schedule(step, &self.config);
        let mut total = 0.0;
        let mut grads: Option<Vec<Matrix>> = None;
        let mut kept = Vec::new();
        for b in 0..self.config.batch_size {
            let sample = draw_sample(data, self.config.seed, step, b);
            let numeric = |detail: String, kept: Vec<usize>| TrainError::Numeric {
                step,
                tau,
                lr,
                nodes_per_level: kept,
                detail,
            };
            let mut tape = Tape::new();
            let bp = match self.model.bind(&mut tape) {
                Ok(bp) => bp,
                Err(ModelError::Autodiff(e @ AutodiffError::NonFinite { .. })) => {
                    return Err(numeric(
                        format!("parameter {e}"),
                        vec![sample.trajectory.node_count()],
                    ))
                }
                Err(e) => return Err(e.into()),
            };
            let (loss, levels) = match self.sample_loss(&mut tape, &bp, sample, step, b) {
                Ok(v) => v,
                Err(TrainError::Model(ModelError::Autodiff(
                    e @ AutodiffError::NonFinite { .. },
                ))) => return Err(numeric(e.to_string(), vec![sample.trajectory.node_count()])),
                Err(e) => return Err(e),
            };
            kept = nodes_per_level(sample.trajectory.node_count(), &levels);
            let value = tape.scalar(loss);
            let g = tape.backward(loss)?;
            let g = bp.collect(&g);
            if !value.is_finite() || g.iter().any(|m| !m.is_finite()) {
                return Err(numeric("loss or gradient is not finite".into(), kept));
            }
            total += value;
            match &mut grads {
                None => grads = Some(g),
                Some(acc) => {
                    for (a, x) in acc.iter_mut().zip(&g) {
                        a.data.iter_mut().zip(&x.data).for_each(|(p, q)| *p += q);
                    }
                }
            }
        }
        let mut grads = grads.expect("batch_size >= 1");
        let n = self.config.batch_size as f64;
        if self.config.batch_size > 1 {
            grads
                .iter_mut()
                .for_each(|g| g.data.iter_mut().for_each(|v| *v /= n));
        }
        self.adam.apply(&mut self.model.params, &grads, lr)?;
        self.step += 1;
        Ok(StepReport {
            step,
            loss: total / n,
            lr,
            tau,
            nodes_kept: kept,
        })
    }

    /// Runs `train_step` until `total_steps`, handing each report to
    /// `on_step`.
    pub fn fit(
        &mut self,
        data: &[Trajectory],
        mut on_step: impl FnMut(&Trainer, &StepReport) -> Result<()>,
    ) -> Result<()> {
        while self.step < self.config.total_steps {
            let report = self.train_step(data)?;
            on_step(self, &report)?;
        }
        Ok(())
    }
}
