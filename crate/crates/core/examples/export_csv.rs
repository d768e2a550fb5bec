//! Writes the plot-ready CSV files for one prediction of an untrained model
//! into a directory (a temporary one unless a path is given) and lists them.

use dhmp::export::{write_readme, write_step};
use dhmp::mesh::NodeType;
use dhmp::model::{Model, ModelConfig};
use dhmp::noise::KeyedNoise;
use dhmp::oracle::{compute_norm_stats, generate_trajectory, DatasetConfig, Split};
use dhmp::trainer::{ModelPredictor, Predictor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| tmp.path().to_path_buf());
    std::fs::create_dir_all(&out)?;
    let tr = generate_trajectory(&DatasetConfig::default(), 2, Split::Test, 0)?;
    let norm = compute_norm_stats(std::slice::from_ref(&tr))?;
    let mut model = Model::new(ModelConfig {
        latent: 16,
        hidden: 16,
        node_input: norm.inputs.width() + NodeType::COUNT,
        ..Default::default()
    })?;
    model.set_edge_norm(norm.edges.clone())?;
    let predictor = ModelPredictor {
        model: &model,
        norm: &norm,
        temperature: 0.1,
    };
    let t = 5;
    let prediction = predictor.predict(&tr, tr.state(t), &KeyedNoise::new(0, t as u64))?;
    write_step(&out, &tr, t, &prediction)?;
    write_readme(&out, Split::Test, 0, &[t])?;
    let mut names: Vec<_> = std::fs::read_dir(&out)?
        .map(|e| e.map(|e| e.file_name()))
        .collect::<Result<_, _>>()?;
    names.sort();
    for name in names {
        let path = out.join(&name);
        let lines = std::fs::read_to_string(&path)?.lines().count();
        println!("{:<28} {lines:>5} lines", name.to_string_lossy());
    }
    Ok(())
}
