use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MeshError, MeshGraph, NodeType, Result};

/// Jittered structured triangle mesh on the unit square.
///
/// Nodes are laid out row-major (`x` fastest). Each quad is split along its
/// `(i, j) - (i+1, j+1)` diagonal. Only interior nodes are jittered, by up to
/// `jitter_scale` grid spacings per axis; perimeter nodes are tagged
/// [`NodeType::Boundary`].
pub fn generate_grid_mesh(nx: usize, ny: usize, jitter_scale: f64, seed: u64) -> Result<MeshGraph> {
    if nx < 2 || ny < 2 {
        return Err(MeshError::GridTooSmall { nx, ny });
    }
    if !(0.0..0.5).contains(&jitter_scale) {
        return Err(MeshError::BadJitter(jitter_scale));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hx, hy) = (1.0 / (nx - 1) as f64, 1.0 / (ny - 1) as f64);
    let mut positions = Vec::with_capacity(nx * ny);
    let mut types = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let boundary = i == 0 || j == 0 || i == nx - 1 || j == ny - 1;
            let mut p = [i as f64 * hx, j as f64 * hy];
            if !boundary && jitter_scale > 0.0 {
                p[0] += rng.gen_range(-1.0..1.0) * jitter_scale * hx;
                p[1] += rng.gen_range(-1.0..1.0) * jitter_scale * hy;
            }
            positions.push(p);
            types.push(if boundary {
                NodeType::Boundary
            } else {
                NodeType::Interior
            });
        }
    }
    let id = |i: usize, j: usize| j * nx + i;
    let mut cells = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            cells.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            cells.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    MeshGraph::from_cells(cells, positions, types)
}
