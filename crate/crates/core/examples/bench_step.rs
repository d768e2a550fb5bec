//! Wall-clock cost of one training step (forward, backward, Adam) across
//! mesh sizes, with the node and edge counts of the hierarchy built.

use std::time::Instant;

use dhmp::autodiff::{Adam, Matrix, Tape};
use dhmp::mesh::generate_grid_mesh;
use dhmp::model::{node_input_matrix, ForwardOptions, Model, ModelConfig};
use dhmp::noise::KeyedNoise;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let width: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(32);
    let mut model = Model::new(ModelConfig {
        latent: width,
        hidden: width,
        node_input: 6,
        ..Default::default()
    })?;
    let mut adam = Adam::new(&model.params);
    println!(
        "latent = hidden = {width}, {} parameters",
        model.params.scalar_count()
    );
    for n in [8usize, 12, 16, 24] {
        let mesh = generate_grid_mesh(n, n, 0.2, 1)?;
        let x = node_input_matrix(&Matrix::zeros(n * n, 3), &mesh.node_types);
        let target = Matrix::zeros(n * n, 1);
        let reps = 20;
        let start = Instant::now();
        let mut sizes = Vec::new();
        for s in 0..reps {
            let mut tape = Tape::new();
            let bp = model.bind(&mut tape)?;
            let out = model.forward(
                &mut tape,
                &bp,
                &mesh,
                &x,
                &ForwardOptions::at_temperature(5.0),
                &KeyedNoise::new(1, s),
            )?;
            sizes = out
                .levels
                .iter()
                .map(|l| (l.kept(), l.coarse.edges.len()))
                .collect();
            let t = tape.constant(target.clone())?;
            let loss = tape.mse(out.prediction, t)?;
            let grads = bp.collect(&tape.backward(loss)?);
            adam.apply(&mut model.params, &grads, 1e-4)?;
        }
        println!(
            "{n:>2}x{n:<2}: {:6.2} ms/step, fine edges {:>5}, coarse (nodes, edges) {sizes:?}",
            start.elapsed().as_secs_f64() * 1e3 / reps as f64,
            mesh.edges.len()
        );
    }
    Ok(())
}
