//! Bi-directed mesh graphs, K-hop edge closure and coarse-graph restriction.
//!
//! Edges are stored as `(i, j)` pairs sorted lexicographically. An edge
//! `(i, j)` means `j` is a neighbour of `i`: messages flow from `j` into `i`,
//! so every per-node aggregation is a contiguous segment keyed by the first
//! index. Every node carries the self-loop `(i, i)`.

mod generate;
mod io;

pub use generate::generate_grid_mesh;
pub use io::{load_mesh, save_mesh, MeshManifest};

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("cell list is empty")]
    NoCells,
    #[error("cell {cell} references node {node} but the mesh has {node_count} nodes")]
    IndexOutOfRange {
        cell: usize,
        node: usize,
        node_count: usize,
    },
    #[error("cell {cell} is degenerate (repeated vertex {node})")]
    DegenerateCell { cell: usize, node: usize },
    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("edge ({0}, {1}) references a node outside the graph")]
    EdgeOutOfRange(usize, usize),
    #[error("edge ({0}, {1}) is duplicated or out of sorted order")]
    NotCanonical(usize, usize),
    #[error("edge ({0}, {1}) has no reverse edge")]
    MissingReverse(usize, usize),
    #[error("node {0} has no self-loop")]
    MissingSelfLoop(usize),
    #[error("hop count K must be at least 1")]
    ZeroHops,
    #[error("selection keeps no nodes")]
    EmptySelection,
    #[error("grid must be at least 2x2, got {nx}x{ny}")]
    GridTooSmall { nx: usize, ny: usize },
    #[error("jitter scale {0} outside [0, 0.5)")]
    BadJitter(f64),
    #[error("unknown mesh mode `{0}`")]
    UnknownMode(String),
    #[error("mesh io: {0}")]
    Io(#[from] std::io::Error),
    #[error("mesh manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("mesh blob checksum mismatch")]
    Checksum,
}

pub type Result<T, E = MeshError> = std::result::Result<T, E>;

/// Node category. Boundary and source nodes carry Dirichlet conditions in
/// the physics oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Interior,
    Boundary,
    Source,
}

impl NodeType {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            NodeType::Interior => 0,
            NodeType::Boundary => 1,
            NodeType::Source => 2,
        }
    }

    pub fn is_dirichlet(self) -> bool {
        !matches!(self, NodeType::Interior)
    }
}

/// Eulerian meshes carry fields on fixed nodes; Lagrangian meshes also move
/// in world space and get world-space edge offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MeshMode {
    #[default]
    Eulerian,
    Lagrangian,
}

impl MeshMode {
    /// Width of the raw per-edge offset vector.
    pub fn offset_width(self) -> usize {
        match self {
            MeshMode::Eulerian => 3,
            MeshMode::Lagrangian => 6,
        }
    }
}

impl std::str::FromStr for MeshMode {
    type Err = MeshError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eulerian" => Ok(MeshMode::Eulerian),
            "lagrangian" => Ok(MeshMode::Lagrangian),
            _ => Err(MeshError::UnknownMode(s.to_string())),
        }
    }
}

pub type Edge = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct MeshGraph {
    pub node_count: usize,
    pub edges: Vec<Edge>,
    pub mesh_positions: Vec<[f64; 2]>,
    pub world_positions: Vec<[f64; 2]>,
    pub node_types: Vec<NodeType>,
    pub cells: Vec<[usize; 3]>,
}

impl MeshGraph {
    /// Builds the bi-directed graph of a triangle mesh: both directions of
    /// every triangle side plus one self-loop per node, sorted.
    pub fn from_cells(
        cells: Vec<[usize; 3]>,
        mesh_positions: Vec<[f64; 2]>,
        node_types: Vec<NodeType>,
    ) -> Result<Self> {
        let node_count = mesh_positions.len();
        if node_types.len() != node_count {
            return Err(MeshError::LengthMismatch {
                what: "node_types",
                got: node_types.len(),
                expected: node_count,
            });
        }
        if cells.is_empty() {
            return Err(MeshError::NoCells);
        }
        let mut set = BTreeSet::new();
        for (c, tri) in cells.iter().enumerate() {
            for &node in tri {
                if node >= node_count {
                    return Err(MeshError::IndexOutOfRange {
                        cell: c,
                        node,
                        node_count,
                    });
                }
            }
            for a in 0..3 {
                for b in (a + 1)..3 {
                    if tri[a] == tri[b] {
                        return Err(MeshError::DegenerateCell {
                            cell: c,
                            node: tri[a],
                        });
                    }
                    set.insert((tri[a], tri[b]));
                    set.insert((tri[b], tri[a]));
                }
            }
        }
        set.extend((0..node_count).map(|i| (i, i)));
        Ok(MeshGraph {
            node_count,
            edges: set.into_iter().collect(),
            world_positions: mesh_positions.clone(),
            mesh_positions,
            node_types,
            cells,
        })
    }

    /// Replaces world positions (Lagrangian meshes).
    pub fn with_world_positions(mut self, world: Vec<[f64; 2]>) -> Result<Self> {
        if world.len() != self.node_count {
            return Err(MeshError::LengthMismatch {
                what: "world_positions",
                got: world.len(),
                expected: self.node_count,
            });
        }
        self.world_positions = world;
        Ok(self)
    }

    /// Checks the bi-direction, self-loop, ordering and range invariants.
    pub fn validate(&self) -> Result<()> {
        validate_edges(&self.edges, self.node_count)
    }

    /// Number of non-loop neighbours of each node.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        for &(i, j) in &self.edges {
            if i != j {
                deg[i] += 1;
            }
        }
        deg
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    /// Shortest mesh-space edge length, ignoring self-loops.
    pub fn min_edge_length(&self) -> f64 {
        self.edges
            .iter()
            .filter(|(i, j)| i != j)
            .map(|&(i, j)| norm(sub(self.mesh_positions[j], self.mesh_positions[i])))
            .fold(f64::INFINITY, f64::min)
    }

    /// Undirected mesh edges (i < j).
    pub fn undirected_edge_count(&self) -> usize {
        self.edges.iter().filter(|(i, j)| i < j).count()
    }
}

/// Checks an edge list against the bi-directed graph invariants.
pub fn validate_edges(edges: &[Edge], node_count: usize) -> Result<()> {
    if let Some(w) = edges.windows(2).find(|w| w[0] >= w[1]) {
        return Err(MeshError::NotCanonical(w[1].0, w[1].1));
    }
    let set: BTreeSet<Edge> = edges.iter().copied().collect();
    for &(i, j) in edges {
        if i >= node_count || j >= node_count {
            return Err(MeshError::EdgeOutOfRange(i, j));
        }
        if !set.contains(&(j, i)) {
            return Err(MeshError::MissingReverse(i, j));
        }
    }
    for i in 0..node_count {
        if !set.contains(&(i, i)) {
            return Err(MeshError::MissingSelfLoop(i));
        }
    }
    Ok(())
}

/// Start offset of each node's segment in a sorted edge list; has
/// `node_count + 1` entries.
pub fn segment_offsets(edges: &[Edge], node_count: usize) -> Vec<usize> {
    let mut offsets = vec![0; node_count + 1];
    for &(i, _) in edges {
        offsets[i + 1] += 1;
    }
    for k in 0..node_count {
        offsets[k + 1] += offsets[k];
    }
    offsets
}

/// Adds every pair reachable in at most `k` directed hops to the edge set.
///
/// Hops are taken over the loop-free adjacency; self-loops present in the
/// input are kept, none are created by walking out and back.
pub fn k_hop_closure(edges: &[Edge], node_count: usize, k: usize) -> Result<Vec<Edge>> {
    if k == 0 {
        return Err(MeshError::ZeroHops);
    }
    let mut adjacency = vec![Vec::new(); node_count];
    for &(i, j) in edges {
        if i >= node_count || j >= node_count {
            return Err(MeshError::EdgeOutOfRange(i, j));
        }
        if i != j {
            adjacency[i].push(j);
        }
    }
    let mut out: BTreeSet<Edge> = edges.iter().copied().collect();
    let mut depth = vec![usize::MAX; node_count];
    let mut queue = VecDeque::new();
    let mut touched = Vec::new();
    for start in 0..node_count {
        depth[start] = 0;
        touched.push(start);
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            if depth[u] == k {
                continue;
            }
            for &v in &adjacency[u] {
                if depth[v] == usize::MAX {
                    depth[v] = depth[u] + 1;
                    touched.push(v);
                    queue.push_back(v);
                    out.insert((start, v));
                }
            }
        }
        for t in touched.drain(..) {
            depth[t] = usize::MAX;
        }
    }
    Ok(out.into_iter().collect())
}

/// The next-level graph: selected nodes and the enhanced edges among them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoarseGraph {
    pub selected: Vec<bool>,
    pub fine_index_of: Vec<usize>,
    pub edges: Vec<Edge>,
}

impl CoarseGraph {
    pub fn node_count(&self) -> usize {
        self.fine_index_of.len()
    }

    /// Fine index → coarse index for selected nodes.
    pub fn coarse_index_of(&self) -> Vec<Option<usize>> {
        let mut map = vec![None; self.selected.len()];
        for (c, &f) in self.fine_index_of.iter().enumerate() {
            map[f] = Some(c);
        }
        map
    }
}

/// Keeps the enhanced edges whose endpoints are both selected and re-indexes
/// them to coarse indices (ordered by fine index).
pub fn restrict_to_selected(enhanced: &[Edge], selected: &[bool]) -> Result<CoarseGraph> {
    let fine_index_of: Vec<usize> = selected
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| s.then_some(i))
        .collect();
    if fine_index_of.is_empty() {
        return Err(MeshError::EmptySelection);
    }
    let mut coarse_of = vec![usize::MAX; selected.len()];
    for (c, &f) in fine_index_of.iter().enumerate() {
        coarse_of[f] = c;
    }
    let mut edges = Vec::new();
    for &(i, j) in enhanced {
        if i >= selected.len() || j >= selected.len() {
            return Err(MeshError::EdgeOutOfRange(i, j));
        }
        if selected[i] && selected[j] {
            edges.push((coarse_of[i], coarse_of[j]));
        }
    }
    // Coarse indices are monotone in fine indices, so order is preserved.
    debug_assert!(edges.windows(2).all(|w| w[0] < w[1]));
    Ok(CoarseGraph {
        selected: selected.to_vec(),
        fine_index_of,
        edges,
    })
}

/// Number of connected components of an edge list over `node_count` nodes.
pub fn component_count(edges: &[Edge], node_count: usize) -> usize {
    let mut parent: Vec<usize> = (0..node_count).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut count = node_count;
    for &(i, j) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
            count -= 1;
        }
    }
    count
}

/// Breadth-first hop depth of every node from `root` (`usize::MAX` when
/// unreachable). Neighbours are visited in edge order.
pub fn bfs_depths(edges: &[Edge], node_count: usize, root: usize) -> Vec<usize> {
    let offsets = segment_offsets(edges, node_count);
    let mut depth = vec![usize::MAX; node_count];
    let mut queue = VecDeque::from([root]);
    depth[root] = 0;
    while let Some(u) = queue.pop_front() {
        for &(_, v) in &edges[offsets[u]..offsets[u + 1]] {
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                queue.push_back(v);
            }
        }
    }
    depth
}

/// Raw per-edge geometric features, one row per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeOffsets {
    pub width: usize,
    pub values: Vec<f64>,
}

impl EdgeOffsets {
    pub fn rows(&self) -> usize {
        self.values.len() / self.width
    }

    pub fn row(&self, e: usize) -> &[f64] {
        &self.values[e * self.width..(e + 1) * self.width]
    }
}

/// `X_j - X_i` and its norm for every edge `(i, j)`; Lagrangian mode appends
/// the same pair computed from world positions.
pub fn compute_edge_offsets(
    edges: &[Edge],
    mesh_positions: &[[f64; 2]],
    world_positions: &[[f64; 2]],
    mode: MeshMode,
) -> EdgeOffsets {
    let width = mode.offset_width();
    let mut values = Vec::with_capacity(edges.len() * width);
    for &(i, j) in edges {
        let d = sub(mesh_positions[j], mesh_positions[i]);
        values.extend_from_slice(&[d[0], d[1], norm(d)]);
        if mode == MeshMode::Lagrangian {
            let w = sub(world_positions[j], world_positions[i]);
            values.extend_from_slice(&[w[0], w[1], norm(w)]);
        }
    }
    EdgeOffsets { width, values }
}

pub(crate) fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

pub(crate) fn norm(d: [f64; 2]) -> f64 {
    d[0].hypot(d[1])
}
