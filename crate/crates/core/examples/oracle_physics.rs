//! Runs the reference solvers on a jittered grid and prints the physical
//! checks they satisfy: the maximum principle, exact conservation of the
//! interior exchange, and linearity.

use dhmp::mesh::generate_grid_mesh;
use dhmp::oracle::{simulate_advection, simulate_diffusion};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mesh = generate_grid_mesh(12, 12, 0.2, 7)?;
    let n = mesh.node_count;
    let center = |i: usize| {
        let [x, y] = mesh.world_positions[i];
        (-((x - 0.4).powi(2) + (y - 0.6).powi(2)) / 0.02).exp()
    };
    let u0: Vec<f64> = (0..n).map(center).collect();

    let diff = simulate_diffusion(&mesh, &u0, 0.05, 1.0, 40)?;
    let (lo, hi) = u0
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let last = diff.state(40);
    let (lo2, hi2) = last
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!("diffusion: initial range [{lo:.4}, {hi:.4}], after 40 steps [{lo2:.4}, {hi2:.4}]");

    // every node free: the exchange term only moves mass around
    let mut free = mesh.clone();
    free.node_types.fill(dhmp::mesh::NodeType::Interior);
    let t = simulate_diffusion(&free, &u0, 0.05, 1.0, 40)?;
    let mass = |s: &[f64]| s.iter().sum::<f64>();
    println!(
        "conservation: |Δmass| = {:.2e}",
        (mass(t.state(40)) - mass(t.state(0))).abs()
    );

    let v: Vec<[f64; 2]> = (0..n).map(|_| [0.02, -0.01]).collect();
    let a = simulate_advection(&mesh, &u0, &v, 0.02, 1.0, 20)?;
    let b = simulate_advection(&mesh, last, &v, 0.02, 1.0, 20)?;
    let sum: Vec<f64> = u0
        .iter()
        .zip(last)
        .map(|(p, q)| 2.0 * p - 3.0 * q)
        .collect();
    let c = simulate_advection(&mesh, &sum, &v, 0.02, 1.0, 20)?;
    let err = (0..n)
        .map(|i| (c.state(20)[i] - (2.0 * a.state(20)[i] - 3.0 * b.state(20)[i])).abs())
        .fold(0.0, f64::max);
    println!("advection superposition: max error {err:.2e}");
    Ok(())
}
