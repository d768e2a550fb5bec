//! Ground-truth physics on triangle meshes.
//!
//! Both solvers are explicit, first order and linear in the field: one step
//! is `u_i += dt * sum_j c_ij (u_j - u_i)` over the non-loop neighbours of
//! every free node, with Dirichlet nodes pinned to their initial value.
//! Diffusion uses `c_ij = kappa`; advection adds an upwind term on edges
//! that point against the local velocity.

mod dataset;
mod norm;

pub use dataset::configured_threads;
pub(crate) use dataset::with_pool;
pub use dataset::{
    generate_trajectory, load_trajectory, make_dataset, save_trajectory, Dataset, DatasetConfig,
    DatasetManifest, FileEntry, Split, Task,
};
pub use norm::{compute_norm_stats, ChannelStats, NormStats};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Matrix;
use crate::mesh::{MeshError, MeshGraph};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("unstable diffusion: dt*kappa*max_degree = {value:.4} > 0.5; use dt <= {limit_dt:.6}")]
    Stability { value: f64, limit_dt: f64 },
    #[error("CFL violated: dt*|v|max/min_edge = {value:.4} > 0.5; use dt <= {limit_dt:.6}")]
    Cfl { value: f64, limit_dt: f64 },
    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("a trajectory needs at least one step")]
    NoSteps,
    #[error("non-finite {what}")]
    NonFinite { what: &'static str },
    #[error("no trajectories to compute statistics from")]
    NoTrajectories,
    #[error("dataset config: {0}")]
    Config(String),
    #[error("malformed trajectory file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("checksum mismatch for {0}")]
    Checksum(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = OracleError> = std::result::Result<T, E>;

/// How Dirichlet nodes (boundary and source types) are held.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// Boundary nodes fixed at `value` for the whole trajectory.
    Dirichlet { value: f64 },
}

/// A patch of nodes held at a constant value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub nodes: Vec<usize>,
    pub value: f64,
}

/// States `0..steps` of a scalar field on a fixed mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mesh: MeshGraph,
    /// Number of stored states, at least 2.
    pub steps: usize,
    pub channels: usize,
    /// Row-major `steps x nodes x channels`.
    pub fields: Vec<f64>,
    /// Static per-node velocity, present for the advection task.
    pub velocity: Option<Vec<[f64; 2]>>,
    pub kappa: f64,
    pub dt: f64,
    pub boundary: BoundaryCondition,
    pub source: Option<SourceSpec>,
}

impl Trajectory {
    pub fn node_count(&self) -> usize {
        self.mesh.node_count
    }

    fn stride(&self) -> usize {
        self.mesh.node_count * self.channels
    }

    /// Field at state `t`, `nodes x channels` row-major.
    pub fn state(&self, t: usize) -> &[f64] {
        let s = self.stride();
        &self.fields[t * s..(t + 1) * s]
    }

    /// `state(t + 1) - state(t)`.
    pub fn delta(&self, t: usize) -> Vec<f64> {
        self.state(t + 1)
            .iter()
            .zip(self.state(t))
            .map(|(b, a)| b - a)
            .collect()
    }

    /// Width of the physical node inputs: field channels plus velocity.
    pub fn input_width(&self) -> usize {
        self.channels + if self.velocity.is_some() { 2 } else { 0 }
    }

    /// Physical node inputs for field values `u` (`nodes x channels`):
    /// the field followed by the static velocity, if any.
    pub fn inputs_for(&self, u: &[f64]) -> Matrix {
        let n = self.node_count();
        let w = self.input_width();
        let mut data = Vec::with_capacity(n * w);
        for i in 0..n {
            data.extend_from_slice(&u[i * self.channels..(i + 1) * self.channels]);
            if let Some(v) = &self.velocity {
                data.extend_from_slice(&v[i]);
            }
        }
        Matrix::from_vec(n, w, data)
    }

    pub fn inputs(&self, t: usize) -> Matrix {
        self.inputs_for(self.state(t))
    }

    /// Dirichlet flag per node.
    pub fn pinned(&self) -> Vec<bool> {
        self.mesh
            .node_types
            .iter()
            .map(|t| t.is_dirichlet())
            .collect()
    }
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(OracleError::LengthMismatch {
            what,
            got,
            expected,
        });
    }
    Ok(())
}

fn check_diffusion(mesh: &MeshGraph, kappa: f64, dt: f64) -> Result<()> {
    let deg = mesh.max_degree() as f64;
    let value = dt * kappa * deg;
    if !value.is_finite() || kappa < 0.0 || dt <= 0.0 {
        return Err(OracleError::NonFinite {
            what: "kappa or dt",
        });
    }
    if value > 0.5 {
        return Err(OracleError::Stability {
            value,
            limit_dt: 0.5 / (kappa * deg),
        });
    }
    Ok(())
}

/// Explicit Euler diffusion with the combinatorial Laplacian.
pub fn simulate_diffusion(
    mesh: &MeshGraph,
    u0: &[f64],
    kappa: f64,
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    check_len("u0", u0.len(), mesh.node_count)?;
    check_diffusion(mesh, kappa, dt)?;
    let coef = vec![kappa; mesh.edges.len()];
    let fields = integrate(mesh, u0, &coef, dt, steps)?;
    Ok(trajectory(mesh, fields, steps, None, kappa, dt))
}

/// Upwind transport along a fixed velocity field plus diffusion.
///
/// For free node `i` with velocity `v`, each neighbour `j` lying upstream
/// (`c_ij = -v.(x_j - x_i) / (|v| l_ij) > 0`) gets the extra coefficient
/// `|v| c_ij / (l_ij sum_k c_ik)`. The weights are positive and sum to at
/// most `|v| / l_min`, so the scheme is monotone under the CFL bound.
pub fn simulate_advection(
    mesh: &MeshGraph,
    u0: &[f64],
    velocity: &[[f64; 2]],
    kappa: f64,
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    check_len("u0", u0.len(), mesh.node_count)?;
    check_len("velocity", velocity.len(), mesh.node_count)?;
    check_diffusion(mesh, kappa, dt)?;
    let vmax = velocity
        .iter()
        .map(|v| v[0].hypot(v[1]))
        .fold(0.0, f64::max);
    let lmin = mesh.min_edge_length();
    let value = dt * vmax / lmin;
    if !value.is_finite() {
        return Err(OracleError::NonFinite { what: "velocity" });
    }
    if value > 0.5 {
        return Err(OracleError::Cfl {
            value,
            limit_dt: 0.5 * lmin / vmax,
        });
    }
    let coef = advection_coefficients(mesh, velocity, kappa);
    let fields = integrate(mesh, u0, &coef, dt, steps)?;
    Ok(trajectory(
        mesh,
        fields,
        steps,
        Some(velocity.to_vec()),
        kappa,
        dt,
    ))
}

fn advection_coefficients(mesh: &MeshGraph, velocity: &[[f64; 2]], kappa: f64) -> Vec<f64> {
    let pos = &mesh.mesh_positions;
    let mut coef = vec![kappa; mesh.edges.len()];
    let mut start = 0;
    while start < mesh.edges.len() {
        let i = mesh.edges[start].0;
        let end = start + mesh.edges[start..].iter().take_while(|e| e.0 == i).count();
        let v = velocity[i];
        let speed = v[0].hypot(v[1]);
        if speed > 0.0 {
            let upstream: Vec<(usize, f64, f64)> = (start..end)
                .filter(|&e| mesh.edges[e].1 != i)
                .filter_map(|e| {
                    let j = mesh.edges[e].1;
                    let d = [pos[j][0] - pos[i][0], pos[j][1] - pos[i][1]];
                    let l = d[0].hypot(d[1]);
                    let c = -(v[0] * d[0] + v[1] * d[1]) / (speed * l);
                    (c > 0.0).then_some((e, c, l))
                })
                .collect();
            let total: f64 = upstream.iter().map(|u| u.1).sum();
            for (e, c, l) in upstream {
                coef[e] += speed * c / (l * total);
            }
        }
        start = end;
    }
    coef
}

fn integrate(
    mesh: &MeshGraph,
    u0: &[f64],
    coef: &[f64],
    dt: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(OracleError::NoSteps);
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(OracleError::NonFinite {
            what: "initial field",
        });
    }
    let n = mesh.node_count;
    let pinned: Vec<bool> = mesh.node_types.iter().map(|t| t.is_dirichlet()).collect();
    let mut fields = Vec::with_capacity((steps + 1) * n);
    fields.extend_from_slice(u0);
    let mut u = u0.to_vec();
    let mut next = vec![0.0; n];
    for _ in 0..steps {
        next.copy_from_slice(&u);
        for (e, &(i, j)) in mesh.edges.iter().enumerate() {
            if i != j && !pinned[i] {
                next[i] += dt * coef[e] * (u[j] - u[i]);
            }
        }
        std::mem::swap(&mut u, &mut next);
        fields.extend_from_slice(&u);
    }
    Ok(fields)
}

fn trajectory(
    mesh: &MeshGraph,
    fields: Vec<f64>,
    steps: usize,
    velocity: Option<Vec<[f64; 2]>>,
    kappa: f64,
    dt: f64,
) -> Trajectory {
    let value = mesh
        .node_types
        .iter()
        .position(|t| *t == crate::mesh::NodeType::Boundary)
        .map_or(0.0, |i| fields[i]);
    Trajectory {
        mesh: mesh.clone(),
        steps: steps + 1,
        channels: 1,
        fields,
        velocity,
        kappa,
        dt,
        boundary: BoundaryCondition::Dirichlet { value },
        source: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_grid_mesh, NodeType};

    fn interior_only(mut mesh: MeshGraph) -> MeshGraph {
        mesh.node_types
            .iter_mut()
            .for_each(|t| *t = NodeType::Interior);
        mesh
    }

    fn bumpy(mesh: &MeshGraph, seed: u64) -> Vec<f64> {
        (0..mesh.node_count)
            .map(|i| crate::noise::keyed_uniform(seed, &[i as u64]))
            .collect()
    }

    #[test]
    fn constant_field_stays_constant() {
        let mesh = generate_grid_mesh(6, 5, 0.2, 1).unwrap();
        let tr = simulate_diffusion(&mesh, &vec![0.7; 30], 0.05, 1.0, 20).unwrap();
        assert_eq!(tr.steps, 21);
        assert!(tr.fields.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn exchange_conserves_total_without_pinned_nodes() {
        let mesh = interior_only(generate_grid_mesh(9, 7, 0.3, 2).unwrap());
        let u0 = bumpy(&mesh, 3);
        let tr = simulate_diffusion(&mesh, &u0, 0.08, 1.0, 60).unwrap();
        let total = |t: usize| tr.state(t).iter().sum::<f64>();
        for t in 1..tr.steps {
            assert!((total(t) - total(t - 1)).abs() < 1e-10);
        }
    }

    #[test]
    fn hot_spot_maximum_decreases() {
        let mesh = generate_grid_mesh(8, 8, 0.0, 0).unwrap();
        let mut u0 = vec![0.0; 64];
        u0[3 * 8 + 3] = 1.0;
        let tr = simulate_diffusion(&mesh, &u0, 0.08, 1.0, 100).unwrap();
        let max = |t: usize| tr.state(t).iter().cloned().fold(f64::MIN, f64::max);
        for t in 1..tr.steps {
            assert!(max(t) < max(t - 1));
        }
    }

    #[test]
    fn dirichlet_problem_obeys_maximum_principle() {
        let mesh = generate_grid_mesh(10, 9, 0.25, 5).unwrap();
        let u0: Vec<f64> = bumpy(&mesh, 1).iter().map(|v| 4.0 * v - 1.0).collect();
        let (lo, hi) = u0
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let vel: Vec<[f64; 2]> = mesh
            .mesh_positions
            .iter()
            .map(|p| [0.03 * (0.5 - p[1]), 0.03 * (p[0] - 0.5)])
            .collect();
        for tr in [
            simulate_diffusion(&mesh, &u0, 0.06, 1.0, 80).unwrap(),
            simulate_advection(&mesh, &u0, &vel, 0.03, 1.0, 80).unwrap(),
        ] {
            assert!(tr
                .fields
                .iter()
                .all(|&v| v >= lo - 1e-10 && v <= hi + 1e-10));
            for t in 0..tr.steps {
                for (i, ty) in mesh.node_types.iter().enumerate() {
                    if ty.is_dirichlet() {
                        assert_eq!(tr.state(t)[i], u0[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn superposition_holds() {
        let mesh = generate_grid_mesh(7, 7, 0.2, 4).unwrap();
        let (u, w) = (bumpy(&mesh, 1), bumpy(&mesh, 2));
        let (a, b) = (1.7, -0.6);
        let mix: Vec<f64> = u.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
        let vel = vec![[0.02, -0.01]; 49];
        let run = |u0: &[f64]| simulate_advection(&mesh, u0, &vel, 0.05, 1.0, 40).unwrap();
        let (tu, tw, tm) = (run(&u), run(&w), run(&mix));
        for k in 0..tm.fields.len() {
            assert!((tm.fields[k] - (a * tu.fields[k] + b * tw.fields[k])).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_velocity_reduces_to_diffusion() {
        let mesh = generate_grid_mesh(6, 6, 0.2, 9).unwrap();
        let u0 = bumpy(&mesh, 4);
        let d = simulate_diffusion(&mesh, &u0, 0.05, 1.0, 15).unwrap();
        let a = simulate_advection(&mesh, &u0, &vec![[0.0; 2]; 36], 0.05, 1.0, 15).unwrap();
        assert_eq!(d.fields, a.fields);
    }

    #[test]
    fn blob_drifts_downstream() {
        let mesh = interior_only(generate_grid_mesh(16, 16, 0.0, 0).unwrap());
        let u0: Vec<f64> = mesh
            .mesh_positions
            .iter()
            .map(|p| (-((p[0] - 0.3).powi(2) + (p[1] - 0.5).powi(2)) / 0.01).exp())
            .collect();
        let h = 1.0 / 15.0;
        for dir in [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]] {
            let vel = vec![[0.3 * h * dir[0], 0.3 * h * dir[1]]; 256];
            let tr = simulate_advection(&mesh, &u0, &vel, 0.0, 1.0, 10).unwrap();
            let centroid = |t: usize| {
                let s = tr.state(t);
                let m: f64 = s.iter().sum();
                let cx: f64 = s
                    .iter()
                    .zip(&mesh.mesh_positions)
                    .map(|(u, p)| u * p[0])
                    .sum::<f64>()
                    / m;
                let cy: f64 = s
                    .iter()
                    .zip(&mesh.mesh_positions)
                    .map(|(u, p)| u * p[1])
                    .sum::<f64>()
                    / m;
                [cx, cy]
            };
            let (c0, c1) = (centroid(0), centroid(10));
            let shift = [c1[0] - c0[0], c1[1] - c0[1]];
            assert!(
                shift[0] * dir[0] + shift[1] * dir[1] > 0.5 * h,
                "{dir:?} {shift:?}"
            );
        }
    }

    #[test]
    fn zero_inflow_on_zero_field_stays_zero() {
        let mesh = generate_grid_mesh(5, 5, 0.1, 1).unwrap();
        let tr =
            simulate_advection(&mesh, &[0.0; 25], &vec![[0.05, 0.05]; 25], 0.05, 1.0, 10).unwrap();
        assert!(tr.fields.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unstable_settings_report_the_limit() {
        let mesh = generate_grid_mesh(5, 5, 0.0, 0).unwrap();
        match simulate_diffusion(&mesh, &[0.0; 25], 0.2, 1.0, 3) {
            Err(OracleError::Stability { limit_dt, .. }) => {
                assert!((limit_dt - 0.5 / 1.2).abs() < 1e-12)
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            simulate_advection(&mesh, &[0.0; 25], &vec![[1.0, 0.0]; 25], 0.0, 1.0, 3),
            Err(OracleError::Cfl { .. })
        ));
        assert!(matches!(
            simulate_diffusion(&mesh, &[0.0; 3], 0.05, 1.0, 3),
            Err(OracleError::LengthMismatch { .. })
        ));
    }
}
