//! Interrupts a training run, saves a checkpoint, resumes from it, and
//! shows that the parameters end up bit-identical to an uninterrupted run.

use dhmp::mesh::NodeType;
use dhmp::model::ModelConfig;
use dhmp::oracle::{compute_norm_stats, generate_trajectory, DatasetConfig, Split};
use dhmp::trainer::{load_checkpoint, save_checkpoint, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = DatasetConfig {
        grid_min: 6,
        grid_max: 9,
        steps: 10,
        ..Default::default()
    };
    let data = (0..4)
        .map(|i| generate_trajectory(&config, 3, Split::Train, i))
        .collect::<Result<Vec<_>, _>>()?;
    let norm = compute_norm_stats(&data)?;
    let model = ModelConfig {
        latent: 8,
        hidden: 8,
        node_input: norm.inputs.width() + NodeType::COUNT,
        ..Default::default()
    };
    let train = TrainConfig {
        total_steps: 60,
        ..Default::default()
    };

    let mut full = Trainer::new(model.clone(), train.clone(), norm.clone())?;
    full.fit(&data, |_, _| Ok(()))?;

    let mut first = Trainer::new(model, train, norm)?;
    while first.step < 25 {
        first.train_step(&data)?;
    }
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("step25.ckpt");
    let hash = save_checkpoint(&first, None, &path)?;
    println!(
        "checkpoint at step {} ({} bytes, sha256 {}…)",
        first.step,
        std::fs::metadata(&path)?.len(),
        &hash[..12]
    );

    let (header, mut resumed) = load_checkpoint(&path)?;
    println!(
        "resuming from step {} with {} parameters",
        header.step, header.param_count
    );
    resumed.fit(&data, |_, _| Ok(()))?;

    let same = resumed.model.params.flatten() == full.model.params.flatten();
    println!("resumed run matches the uninterrupted run bit for bit: {same}");
    Ok(())
}
