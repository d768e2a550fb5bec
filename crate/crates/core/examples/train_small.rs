//! Trains a narrow DHMP for a few hundred steps on a freshly generated
//! advection–diffusion dataset and compares it with the zero-delta baseline.

use dhmp::mesh::NodeType;
use dhmp::model::ModelConfig;
use dhmp::oracle::{make_dataset, Dataset, DatasetConfig, Split};
use dhmp::trainer::{evaluate, EvalOptions, ModelPredictor, TrainConfig, Trainer, ZeroDelta};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let data = DatasetConfig {
        train: 16,
        val: 4,
        test: 0,
        ood: 0,
        ..Default::default()
    };
    make_dataset(&data, 1, dir.path())?;
    let ds = Dataset::open(dir.path())?;
    let (train, val) = (ds.load(Split::Train)?, ds.load(Split::Val)?);
    let norm = ds.norm_stats().clone();

    let model = ModelConfig {
        latent: 16,
        hidden: 16,
        node_input: norm.inputs.width() + NodeType::COUNT,
        output: norm.targets.width(),
        ..Default::default()
    };
    let config = TrainConfig {
        total_steps: 600,
        lr_start: 1e-3,
        lr_end: 1e-4,
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, config, norm)?;
    let mut window = Vec::new();
    trainer.fit(&train, |_, r| {
        window.push(r.loss);
        if window.len() == 100 {
            println!(
                "step {:>4}  loss {:.4}  lr {:.2e}  tau {:.3}  nodes {:?}",
                r.step + 1,
                window.iter().sum::<f64>() / 100.0,
                r.lr,
                r.tau,
                r.nodes_kept
            );
            window.clear();
        }
        Ok(())
    })?;

    let opts = EvalOptions {
        horizon: 20,
        ..Default::default()
    };
    let predictor = ModelPredictor {
        model: &trainer.model,
        norm: &trainer.norm,
        temperature: trainer.config.tau_min,
    };
    let trained = evaluate(&predictor, &val, &opts)?;
    let zero = evaluate(&ZeroDelta, &val, &opts)?;
    println!(
        "val rmse_1: model {:.4e}, zero-delta {:.4e}",
        trained.rmse_1, zero.rmse_1
    );
    println!(
        "val rmse_all (20 steps): model {:.4e}, zero-delta {:.4e}",
        trained.rmse_all, zero.rmse_all
    );
    Ok(())
}
