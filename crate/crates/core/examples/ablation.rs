//! Trains every variant (DHMP, the three ablations and the flat baseline)
//! with two seeds under one small budget and prints the comparison table.

use dhmp::mesh::NodeType;
use dhmp::model::{ModelConfig, Variant};
use dhmp::oracle::{compute_norm_stats, generate_trajectory, DatasetConfig, Split};
use dhmp::trainer::{run_ablation, EvalOptions, ExperimentSpec, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = DatasetConfig {
        grid_max: 10,
        steps: 20,
        ..Default::default()
    };
    let load = |split, n| {
        (0..n)
            .map(|i| generate_trajectory(&config, 6, split, i))
            .collect::<Result<Vec<_>, _>>()
    };
    let (train, test) = (load(Split::Train, 8)?, load(Split::Test, 3)?);
    let norm = compute_norm_stats(&train)?;
    let spec = ExperimentSpec {
        model: ModelConfig {
            latent: 8,
            hidden: 8,
            node_input: norm.inputs.width() + NodeType::COUNT,
            ..Default::default()
        },
        train: TrainConfig {
            total_steps: 100,
            lr_start: 1e-3,
            checkpoint_interval: 0,
            ..Default::default()
        },
        eval: EvalOptions {
            horizon: 10,
            ..Default::default()
        },
    };
    let table = run_ablation(
        &spec,
        &Variant::ALL,
        &[0, 1],
        &train,
        &test,
        &norm,
        &mut |name, seed, r1, _| {
            eprintln!("{name} seed {seed}: rmse_1 {r1:.3e}");
        },
    )?;
    print!("{}", table.to_csv()?);
    Ok(())
}
