//! Runs one forward pass and inspects the anisotropic aggregation weights
//! of every level and layer: they sum to one per receiver, and their spread
//! shows how far each layer is from plain mean aggregation.

use dhmp::autodiff::{Matrix, Tape};
use dhmp::mesh::generate_grid_mesh;
use dhmp::model::{node_input_matrix, ForwardOptions, Model, ModelConfig};
use dhmp::noise::KeyedNoise;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mesh = generate_grid_mesh(9, 9, 0.2, 11)?;
    let fields = Matrix::from_vec(
        mesh.node_count,
        1,
        mesh.world_positions
            .iter()
            .map(|p| (6.0 * p[0]).sin() * p[1])
            .collect(),
    );
    let x = node_input_matrix(&fields, &mesh.node_types);
    let model = Model::new(ModelConfig {
        latent: 16,
        hidden: 16,
        init_seed: 2,
        ..Default::default()
    })?;
    let mut tape = Tape::new();
    let bp = model.bind(&mut tape)?;
    let out = model.forward(
        &mut tape,
        &bp,
        &mesh,
        &x,
        &ForwardOptions::at_temperature(1.0),
        &KeyedNoise::new(3, 0),
    )?;

    for level in &out.levels {
        println!(
            "level {}: kept {} of {} nodes",
            level.level,
            level.kept(),
            level.keep_mask.len()
        );
    }
    for (k, trace) in out.alphas.iter().enumerate() {
        let g = &trace.graph;
        let mut worst = 0.0f64;
        let mut spread = 0.0;
        for r in 0..g.node_count {
            let seg = &trace.alpha[g.segments[r]..g.segments[r + 1]];
            worst = worst.max((seg.iter().sum::<f64>() - 1.0).abs());
            let uniform = 1.0 / seg.len() as f64;
            spread += seg.iter().map(|a| (a - uniform).abs()).sum::<f64>();
        }
        println!(
            "pass {k:>2} on level {}: {} nodes, max |Σα - 1| = {worst:.1e}, mean L1 distance from uniform {:.4}",
            trace.level,
            g.node_count,
            spread / g.node_count as f64
        );
    }
    Ok(())
}
