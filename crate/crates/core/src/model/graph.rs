use std::sync::Arc;

use crate::autodiff::{Matrix, Tensor};
use crate::mesh::{compute_edge_offsets, segment_offsets, CoarseGraph, Edge, MeshGraph, MeshMode};
use crate::oracle::ChannelStats;

/// Topology and geometry of one hierarchy level, with the index arrays the
/// tape ops consume.
#[derive(Debug, Clone)]
pub struct LevelGraph {
    pub level: usize,
    pub node_count: usize,
    pub edges: Vec<Edge>,
    /// First index of each edge (the aggregating node).
    pub receivers: Arc<[usize]>,
    /// Second index of each edge (the neighbour).
    pub senders: Arc<[usize]>,
    /// Segment start of each receiver in `edges`, `node_count + 1` entries.
    pub segments: Vec<usize>,
    pub mesh_positions: Vec<[f64; 2]>,
    pub world_positions: Vec<[f64; 2]>,
    /// Index of each node in the input mesh.
    pub node_keys: Vec<usize>,
}

impl LevelGraph {
    pub fn from_mesh(mesh: &MeshGraph) -> Self {
        Self::build(
            1,
            mesh.node_count,
            mesh.edges.clone(),
            mesh.mesh_positions.clone(),
            mesh.world_positions.clone(),
            (0..mesh.node_count).collect(),
        )
    }

    /// The next level over `coarse`, inheriting positions and keys.
    pub fn coarsen(&self, coarse: &CoarseGraph) -> Self {
        let pick = |v: &[[f64; 2]]| coarse.fine_index_of.iter().map(|&f| v[f]).collect();
        Self::build(
            self.level + 1,
            coarse.node_count(),
            coarse.edges.clone(),
            pick(&self.mesh_positions),
            pick(&self.world_positions),
            coarse
                .fine_index_of
                .iter()
                .map(|&f| self.node_keys[f])
                .collect(),
        )
    }

    /// A level graph from raw parts; `edges` must be sorted and bi-directed
    /// with self-loops.
    pub fn build(
        level: usize,
        node_count: usize,
        edges: Vec<Edge>,
        mesh_positions: Vec<[f64; 2]>,
        world_positions: Vec<[f64; 2]>,
        node_keys: Vec<usize>,
    ) -> Self {
        let receivers: Arc<[usize]> = edges.iter().map(|e| e.0).collect();
        let senders: Arc<[usize]> = edges.iter().map(|e| e.1).collect();
        let segments = segment_offsets(&edges, node_count);
        LevelGraph {
            level,
            node_count,
            edges,
            receivers,
            senders,
            segments,
            mesh_positions,
            world_positions,
            node_keys,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edge offsets as an `edges x width` matrix, normalised by `norm` if
    /// given.
    pub fn offsets(&self, mode: MeshMode, norm: Option<&ChannelStats>) -> Matrix {
        let mut off = compute_edge_offsets(
            &self.edges,
            &self.mesh_positions,
            &self.world_positions,
            mode,
        );
        if let Some(n) = norm {
            n.normalize(&mut off.values);
        }
        Matrix::from_vec(self.edges.len(), off.width, off.values)
    }

    /// `1 / |N(i)|` on every edge of receiver `i` (self-loop included).
    pub fn degree_weights(&self) -> Vec<f64> {
        self.edges
            .iter()
            .map(|&(i, _)| 1.0 / (self.segments[i + 1] - self.segments[i]) as f64)
            .collect()
    }
}

/// Node and edge latents living on one level graph.
#[derive(Debug, Clone)]
pub struct LatentGraph {
    pub nodes: Tensor,
    pub edges: Tensor,
    pub graph: Arc<LevelGraph>,
}
