//! Trains on the small grids of the default dataset and evaluates on the
//! larger held-out grid the model never saw.

use dhmp::mesh::NodeType;
use dhmp::model::ModelConfig;
use dhmp::oracle::{compute_norm_stats, generate_trajectory, DatasetConfig, Split};
use dhmp::trainer::{evaluate, EvalOptions, ModelPredictor, TrainConfig, Trainer, ZeroDelta};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = DatasetConfig::default();
    let load = |split, n| {
        (0..n)
            .map(|i| generate_trajectory(&config, 4, split, i))
            .collect::<Result<Vec<_>, _>>()
    };
    let (train, test, ood) = (
        load(Split::Train, 12)?,
        load(Split::Test, 3)?,
        load(Split::Ood, 2)?,
    );
    let norm = compute_norm_stats(&train)?;
    let mut trainer = Trainer::new(
        ModelConfig {
            latent: 16,
            hidden: 16,
            node_input: norm.inputs.width() + NodeType::COUNT,
            ..Default::default()
        },
        TrainConfig {
            total_steps: 300,
            lr_start: 1e-3,
            ..Default::default()
        },
        norm,
    )?;
    trainer.fit(&train, |_, _| Ok(()))?;
    let model = ModelPredictor {
        model: &trainer.model,
        norm: &trainer.norm,
        temperature: trainer.config.tau_min,
    };
    let opts = EvalOptions {
        horizon: 20,
        ..Default::default()
    };
    for (name, split) in [("in-distribution", &test), ("24x24 held out", &ood)] {
        let m = evaluate(&model, split, &opts)?;
        let z = evaluate(&ZeroDelta, split, &opts)?;
        println!(
            "{name:>16}: {} nodes, rmse_1 {:.4e} (zero-delta {:.4e}), rmse_all {:.4e}, nodes per level {:?}",
            split[0].node_count(),
            m.rmse_1,
            z.rmse_1,
            m.rmse_all,
            m.hierarchy.nodes_per_level
        );
    }
    Ok(())
}
