//! The full learning check for one seed: DHMP with three levels and width
//! 32 trained on the default advection–diffusion dataset, validation
//! RMSE-1 printed every 1000 steps next to the untrained model and the
//! zero-delta predictor.
//!
//! `cargo run --release --example learning_check -- [steps] [seed]`

use dhmp::mesh::NodeType;
use dhmp::model::ModelConfig;
use dhmp::oracle::{make_dataset, Dataset, DatasetConfig, Split};
use dhmp::trainer::{evaluate, EvalOptions, ModelPredictor, TrainConfig, Trainer, ZeroDelta};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args
        .next()
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(20_000);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let dir = tempfile::tempdir()?;
    make_dataset(&DatasetConfig::default(), 0, dir.path())?;
    let ds = Dataset::open(dir.path())?;
    let (train, val) = (ds.load(Split::Train)?, ds.load(Split::Val)?);
    let norm = ds.norm_stats().clone();
    let model = ModelConfig {
        latent: 32,
        hidden: 32,
        node_input: norm.inputs.width() + NodeType::COUNT,
        output: norm.targets.width(),
        init_seed: seed,
        ..Default::default()
    };
    let config = TrainConfig {
        total_steps: steps,
        seed,
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, config, norm)?;
    let opts = EvalOptions {
        horizon: 0,
        ..Default::default()
    };
    let score = |t: &Trainer| {
        let p = ModelPredictor {
            model: &t.model,
            norm: &t.norm,
            temperature: t.config.tau_min,
        };
        evaluate(&p, &val, &opts).map(|m| m.rmse_1)
    };
    let zero = evaluate(&ZeroDelta, &val, &opts)?.rmse_1;
    let untrained = score(&trainer)?;
    println!("zero-delta {zero:.5e}, untrained {untrained:.5e}");

    let start = std::time::Instant::now();
    let mut loss = 0.0;
    trainer.fit(&train, |t, r| {
        loss += r.loss;
        if t.step % 1000 == 0 {
            println!(
                "step {:>5}  loss {:.4}  val {:.5e}  {:.0} s",
                t.step,
                loss / 1000.0,
                score(t)?,
                start.elapsed().as_secs_f64()
            );
            loss = 0.0;
        }
        Ok(())
    })?;
    let last = score(&trainer)?;
    println!(
        "final {last:.5e}: {:.3}x untrained, {:.3}x zero-delta",
        last / untrained,
        last / zero
    );
    Ok(())
}
