//! Sweeps the hop count of the coarse-graph edge enhancement and prints the
//! error and mean coarse-level edge counts for each value.

use dhmp::mesh::NodeType;
use dhmp::model::ModelConfig;
use dhmp::oracle::{compute_norm_stats, generate_trajectory, DatasetConfig, Split};
use dhmp::trainer::{run_ksweep, EvalOptions, ExperimentSpec, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = DatasetConfig {
        grid_max: 10,
        steps: 20,
        ..Default::default()
    };
    let load = |split, n| {
        (0..n)
            .map(|i| generate_trajectory(&config, 9, split, i))
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
    let table = run_ksweep(
        &spec,
        &[1, 2, 3, 4],
        &[0],
        &train,
        &test,
        &norm,
        &mut |_, _, _, _| {},
    )?;
    print!("{}", table.to_csv()?);
    Ok(())
}
