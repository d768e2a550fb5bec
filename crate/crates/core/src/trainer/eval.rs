use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{model_inputs, Result, TrainError};
use crate::autodiff::Tape;
use crate::model::{AlphaTrace, ForwardOptions, HierarchyLevel, Model};
use crate::noise::{mix, KeyedNoise, SelectionNoise, ZeroNoise};
use crate::oracle::{simulate_advection, simulate_diffusion, NormStats, Trajectory};

/// Physical one-step delta and, for learned models, the hierarchy used.
#[derive(Debug, Clone, Default)]
pub struct Prediction {
    pub delta: Vec<f64>,
    pub levels: Vec<HierarchyLevel>,
    pub alphas: Vec<AlphaTrace>,
}

/// Anything that maps a state of a trajectory to its next-step delta.
pub trait Predictor: Sync {
    fn predict(&self, tr: &Trajectory, u: &[f64], noise: &dyn SelectionNoise)
        -> Result<Prediction>;
}

pub struct ModelPredictor<'a> {
    pub model: &'a Model,
    pub norm: &'a NormStats,
    /// Only scales the relaxed gates; hard selections do not depend on it.
    pub temperature: f64,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(
        &self,
        tr: &Trajectory,
        u: &[f64],
        noise: &dyn SelectionNoise,
    ) -> Result<Prediction> {
        let x = model_inputs(tr, u, self.norm);
        let mut tape = Tape::new();
        let bp = self.model.bind(&mut tape)?;
        let out = self.model.forward(
            &mut tape,
            &bp,
            &tr.mesh,
            &x,
            &ForwardOptions::at_temperature(self.temperature),
            noise,
        )?;
        let mut delta = tape.value(out.prediction).data.clone();
        self.norm.targets.denormalize(&mut delta);
        Ok(Prediction {
            delta,
            levels: out.levels,
            alphas: out.alphas,
        })
    }
}

/// Predicts no change.
pub struct ZeroDelta;

impl Predictor for ZeroDelta {
    fn predict(&self, _: &Trajectory, u: &[f64], _: &dyn SelectionNoise) -> Result<Prediction> {
        Ok(Prediction {
            delta: vec![0.0; u.len()],
            ..Default::default()
        })
    }
}

/// Runs the ground-truth solver for one step.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, tr: &Trajectory, u: &[f64], _: &dyn SelectionNoise) -> Result<Prediction> {
        let next = match &tr.velocity {
            Some(v) => simulate_advection(&tr.mesh, u, v, tr.kappa, tr.dt, 1)?,
            None => simulate_diffusion(&tr.mesh, u, tr.kappa, tr.dt, 1)?,
        };
        Ok(Prediction {
            delta: next.delta(0),
            ..Default::default()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Rollout length in steps from the initial state.
    pub horizon: usize,
    /// Argmax node selection instead of Gumbel sampling.
    pub deterministic: bool,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            horizon: 50,
            deterministic: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HierarchyStats {
    /// Mean node count per level, input mesh first.
    pub nodes_per_level: Vec<f64>,
    /// Mean connected components of each coarse level.
    pub components_per_level: Vec<f64>,
    /// Forward passes in which some level kept no node and the fallback
    /// forced one in.
    pub forced_keeps: usize,
    pub forward_passes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse_1: f64,
    pub rmse_all: f64,
    /// RMSE of the rollout after each step, `horizon` entries.
    pub rollout_curve: Vec<f64>,
    pub hierarchy: HierarchyStats,
    pub wall_clock_s: f64,
    pub trajectories: usize,
    pub options: EvalOptions,
}

#[derive(Default)]
struct Partial {
    one_step: (f64, usize),
    rollout: Vec<(f64, usize)>,
    nodes: Vec<f64>,
    components: Vec<f64>,
    forced: usize,
    passes: usize,
}

impl Partial {
    fn record(&mut self, tr: &Trajectory, p: &Prediction) {
        let depth = p.levels.len() + 1;
        if self.nodes.len() < depth {
            self.nodes.resize(depth, 0.0);
            self.components.resize(depth, 0.0);
        }
        self.nodes[0] += tr.node_count() as f64;
        self.components[0] += crate::mesh::component_count(&tr.mesh.edges, tr.node_count()) as f64;
        for (l, level) in p.levels.iter().enumerate() {
            self.nodes[l + 1] += level.kept() as f64;
            self.components[l + 1] += level.coarse_components as f64;
        }
        self.forced += usize::from(p.levels.iter().any(|l| l.forced_keep.is_some()));
        self.passes += 1;
    }

    fn merge(mut self, other: Partial) -> Partial {
        self.one_step.0 += other.one_step.0;
        self.one_step.1 += other.one_step.1;
        if self.rollout.len() < other.rollout.len() {
            self.rollout.resize(other.rollout.len(), (0.0, 0));
        }
        for (a, b) in self.rollout.iter_mut().zip(other.rollout) {
            a.0 += b.0;
            a.1 += b.1;
        }
        for (v, o) in [
            (&mut self.nodes, other.nodes),
            (&mut self.components, other.components),
        ] {
            if v.len() < o.len() {
                v.resize(o.len(), 0.0);
            }
            v.iter_mut().zip(o).for_each(|(a, b)| *a += b);
        }
        self.forced += other.forced;
        self.passes += other.passes;
        self
    }
}

const ONE_STEP_KEY: u64 = 1;
const ROLLOUT_KEY: u64 = 2;

/// Known boundary values replace predictions on Dirichlet nodes.
fn pin(tr: &Trajectory, delta: &mut [f64]) {
    for (i, p) in tr.pinned().into_iter().enumerate() {
        if p {
            delta[i * tr.channels..(i + 1) * tr.channels].fill(0.0);
        }
    }
}

fn evaluate_one(
    predictor: &dyn Predictor,
    tr: &Trajectory,
    index: usize,
    opts: &EvalOptions,
) -> Result<Partial> {
    let noise_for = |kind: u64, t: usize| -> Box<dyn SelectionNoise> {
        if opts.deterministic {
            Box::new(ZeroNoise)
        } else {
            Box::new(KeyedNoise::new(
                mix(opts.seed, &[kind, index as u64]),
                t as u64,
            ))
        }
    };
    let mut part = Partial::default();
    for t in 0..tr.steps - 1 {
        let mut p = predictor.predict(tr, tr.state(t), noise_for(ONE_STEP_KEY, t).as_ref())?;
        pin(tr, &mut p.delta);
        let truth = tr.delta(t);
        part.one_step.0 += p
            .delta
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
        part.one_step.1 += truth.len();
        part.record(tr, &p);
    }
    let mut u = tr.state(0).to_vec();
    for t in 0..opts.horizon {
        let mut p = predictor.predict(tr, &u, noise_for(ROLLOUT_KEY, t).as_ref())?;
        pin(tr, &mut p.delta);
        u.iter_mut().zip(&p.delta).for_each(|(a, d)| *a += d);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Numeric {
                step: t as u64,
                tau: 0.0,
                lr: 0.0,
                nodes_per_level: vec![tr.node_count()],
                detail: format!("rollout of trajectory {index} diverged"),
            });
        }
        let err: f64 = u
            .iter()
            .zip(tr.state(t + 1))
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        part.rollout.push((err, u.len()));
        part.record(tr, &p);
    }
    Ok(part)
}

/// RMSE-1 over every transition of every trajectory and RMSE-all over a
/// rollout of `horizon` steps fed by its own predictions, both in physical
/// units. Trajectories run in parallel; results are reduced in order.
pub fn evaluate(
    predictor: &dyn Predictor,
    trajectories: &[Trajectory],
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    if trajectories.is_empty() {
        return Err(TrainError::Config("nothing to evaluate".into()));
    }
    for (k, tr) in trajectories.iter().enumerate() {
        if opts.horizon > tr.steps - 1 {
            return Err(TrainError::Horizon {
                horizon: opts.horizon,
                available: tr.steps - 1,
                trajectory: k,
            });
        }
    }
    let start = Instant::now();
    let parts: Vec<Partial> = crate::oracle::with_pool(|| {
        trajectories
            .par_iter()
            .enumerate()
            .map(|(k, tr)| evaluate_one(predictor, tr, k, opts))
            .collect::<Result<Vec<_>>>()
    })?;
    let total = parts.into_iter().fold(Partial::default(), Partial::merge);
    let rollout_curve: Vec<f64> = total
        .rollout
        .iter()
        .map(|(s, n)| (s / *n as f64).sqrt())
        .collect();
    let (rs, rn) = total
        .rollout
        .iter()
        .fold((0.0, 0usize), |(s, n), &(a, b)| (s + a, n + b));
    let passes = total.passes.max(1) as f64;
    Ok(MetricsReport {
        rmse_1: (total.one_step.0 / total.one_step.1 as f64).sqrt(),
        rmse_all: if rn == 0 {
            0.0
        } else {
            (rs / rn as f64).sqrt()
        },
        rollout_curve,
        hierarchy: HierarchyStats {
            nodes_per_level: total.nodes.iter().map(|v| v / passes).collect(),
            components_per_level: total.components.iter().map(|v| v / passes).collect(),
            forced_keeps: total.forced,
            forward_passes: total.passes,
        },
        wall_clock_s: start.elapsed().as_secs_f64(),
        trajectories: trajectories.len(),
        options: *opts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedReport {
    pub rmse_1: MeanStd,
    pub rmse_all: MeanStd,
    pub runs: Vec<MetricsReport>,
}

/// `repeats` evaluations with eval seeds `seed, seed + 1, ...`.
pub fn evaluate_repeated(
    predictor: &dyn Predictor,
    trajectories: &[Trajectory],
    opts: &EvalOptions,
    repeats: usize,
) -> Result<RepeatedReport> {
    let runs = (0..repeats.max(1) as u64)
        .map(|r| {
            let o = EvalOptions {
                seed: opts.seed.wrapping_add(r),
                ..*opts
            };
            evaluate(predictor, trajectories, &o)
        })
        .collect::<Result<Vec<_>>>()?;
    let pick = |f: fn(&MetricsReport) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(RepeatedReport {
        rmse_1: pick(|r| r.rmse_1),
        rmse_all: pick(|r| r.rmse_all),
        runs,
    })
}
