//! Scores the reference solver, the zero-delta predictor and an untrained
//! model on the same trajectories, including the per-step rollout curve.

use dhmp::mesh::NodeType;
use dhmp::model::{Model, ModelConfig};
use dhmp::oracle::{compute_norm_stats, generate_trajectory, DatasetConfig, Split};
use dhmp::trainer::{evaluate, EvalOptions, ModelPredictor, OraclePredictor, ZeroDelta};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = DatasetConfig {
        steps: 30,
        ..Default::default()
    };
    let data = (0..4)
        .map(|i| generate_trajectory(&config, 5, Split::Val, i))
        .collect::<Result<Vec<_>, _>>()?;
    let norm = compute_norm_stats(&data)?;
    let mut model = Model::new(ModelConfig {
        latent: 16,
        hidden: 16,
        node_input: norm.inputs.width() + NodeType::COUNT,
        output: norm.targets.width(),
        ..Default::default()
    })?;
    model.set_edge_norm(norm.edges.clone())?;
    let untrained = ModelPredictor {
        model: &model,
        norm: &norm,
        temperature: 0.1,
    };
    let opts = EvalOptions {
        horizon: 30,
        ..Default::default()
    };
    for (name, report) in [
        ("oracle", evaluate(&OraclePredictor, &data, &opts)?),
        ("zero-delta", evaluate(&ZeroDelta, &data, &opts)?),
        ("untrained", evaluate(&untrained, &data, &opts)?),
    ] {
        let curve: Vec<String> = report
            .rollout_curve
            .iter()
            .step_by(10)
            .map(|e| format!("{e:.3e}"))
            .collect();
        println!(
            "{name:>10}: rmse_1 {:.4e}  rmse_all {:.4e}  rollout every 10 steps [{}]",
            report.rmse_1,
            report.rmse_all,
            curve.join(", ")
        );
    }
    Ok(())
}
