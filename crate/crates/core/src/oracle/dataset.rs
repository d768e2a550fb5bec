use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    compute_norm_stats, simulate_advection, simulate_diffusion, BoundaryCondition, NormStats,
    OracleError, Result, SourceSpec, Trajectory,
};
use crate::blob::{decode_f64s, encode_f64s, sha256_hex};
use crate::mesh::{generate_grid_mesh, MeshGraph, NodeType};
use crate::noise::stream;

const TRAJECTORY_FORMAT: &str = "dhmp-trajectory/1";
const DATASET_FORMAT: &str = "dhmp-dataset/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Diffusion,
    #[default]
    AdvectionDiffusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Ood,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::Ood];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Ood => "ood",
        }
    }

    fn key(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
            Split::Ood => 4,
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s.to_ascii_lowercase())
            .ok_or_else(|| OracleError::Config(format!("unknown split `{s}`")))
    }
}

/// Procedural dataset description. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub task: Task,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Trajectories on the held-out high-resolution grid.
    pub ood: usize,
    /// Grid side lengths (in nodes) are drawn uniformly from this range.
    pub grid_min: usize,
    pub grid_max: usize,
    pub ood_grid: usize,
    /// Solver updates per trajectory; each file stores `steps + 1` states.
    pub steps: usize,
    pub jitter: f64,
    pub kappa: f64,
    pub dt: f64,
    /// Peak `dt * |v| / min_edge_length` of the velocity field.
    pub cfl: f64,
    pub boundary_value: f64,
    pub source_value: f64,
    pub max_blobs: usize,
    /// Range of the Gaussian blob widths, in domain units.
    pub blob_width: [f64; 2],
    /// Solver updates run and discarded before the first stored state.
    pub warmup: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            task: Task::AdvectionDiffusion,
            train: 64,
            val: 8,
            test: 8,
            ood: 8,
            grid_min: 8,
            grid_max: 16,
            ood_grid: 24,
            steps: 50,
            jitter: 0.2,
            kappa: 0.05,
            dt: 1.0,
            cfl: 0.4,
            boundary_value: 0.0,
            source_value: 1.0,
            max_blobs: 3,
            blob_width: [0.08, 0.2],
            warmup: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(OracleError::Config(m.to_string()));
        if self.train == 0 {
            return bad("at least one training trajectory is required");
        }
        if self.grid_min < 4 || self.grid_max < self.grid_min || self.ood_grid < 4 {
            return bad("grids need at least 4 nodes per side and grid_min <= grid_max");
        }
        if self.steps == 0 {
            return bad("steps must be positive");
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return bad("jitter must lie in [0, 0.5)");
        }
        if !(self.cfl >= 0.0 && self.cfl <= 0.5) {
            return bad("cfl must lie in [0, 0.5]");
        }
        if !(self.blob_width[0] > 0.0 && self.blob_width[0] <= self.blob_width[1]) {
            return bad("blob_width must be a positive, ordered range");
        }
        if !(self.kappa >= 0.0 && self.dt > 0.0) || self.max_blobs == 0 {
            return bad("kappa must be non-negative, dt positive and max_blobs at least 1");
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
            Split::Ood => self.ood,
        }
    }
}

/// One trajectory, fully determined by `(seed, split, index)`.
///
/// The mesh is a jittered grid; a small patch around a random interior node
/// becomes a constant source, the rest starts as a sum of Gaussian blobs.
/// The velocity is a uniform drift plus a rigid rotation, scaled to the
/// configured CFL number.
pub fn generate_trajectory(
    config: &DatasetConfig,
    seed: u64,
    split: Split,
    index: usize,
) -> Result<Trajectory> {
    let mut rng = stream(seed, &[split.key(), index as u64]);
    let (nx, ny) = match split {
        Split::Ood => (config.ood_grid, config.ood_grid),
        _ => (
            rng.gen_range(config.grid_min..=config.grid_max),
            rng.gen_range(config.grid_min..=config.grid_max),
        ),
    };
    let mut mesh = generate_grid_mesh(nx, ny, config.jitter, rng.gen())?;
    let interior: Vec<usize> = (0..mesh.node_count)
        .filter(|&i| mesh.node_types[i] == NodeType::Interior)
        .collect();
    let centre = interior[rng.gen_range(0..interior.len())];
    let mut patch: Vec<usize> = mesh
        .edges
        .iter()
        .filter(|&&(i, j)| i == centre && mesh.node_types[j] == NodeType::Interior)
        .map(|&(_, j)| j)
        .collect();
    patch.truncate(1 + rng.gen_range(0..3));
    for &i in &patch {
        mesh.node_types[i] = NodeType::Source;
    }

    let blobs: Vec<([f64; 2], f64, f64)> = (0..rng.gen_range(1..=config.max_blobs))
        .map(|_| {
            let c = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
            (
                c,
                rng.gen_range(0.5..1.0),
                rng.gen_range(config.blob_width[0]..=config.blob_width[1]),
            )
        })
        .collect();
    let u0: Vec<f64> = (0..mesh.node_count)
        .map(|i| match mesh.node_types[i] {
            NodeType::Boundary => config.boundary_value,
            NodeType::Source => config.source_value,
            NodeType::Interior => {
                let p = mesh.mesh_positions[i];
                blobs
                    .iter()
                    .map(|(c, a, w)| {
                        a * (-((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / (2.0 * w * w)).exp()
                    })
                    .sum()
            }
        })
        .collect();

    let run = |u: &[f64], steps: usize, velocity: Option<&[[f64; 2]]>| match velocity {
        None => simulate_diffusion(&mesh, u, config.kappa, config.dt, steps),
        Some(v) => simulate_advection(&mesh, u, v, config.kappa, config.dt, steps),
    };
    let velocity = match config.task {
        Task::Diffusion => None,
        Task::AdvectionDiffusion => {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let drift = [angle.cos(), angle.sin()];
            let spin = rng.gen_range(-1.5..1.5);
            let raw: Vec<[f64; 2]> = mesh
                .mesh_positions
                .iter()
                .map(|p| {
                    [
                        drift[0] - spin * (p[1] - 0.5),
                        drift[1] + spin * (p[0] - 0.5),
                    ]
                })
                .collect();
            let peak = raw.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max);
            let scale = config.cfl * mesh.min_edge_length() / (config.dt * peak);
            Some(
                raw.iter()
                    .map(|v| [v[0] * scale, v[1] * scale])
                    .collect::<Vec<_>>(),
            )
        }
    };
    let start = if config.warmup > 0 {
        run(&u0, config.warmup, velocity.as_deref())?
            .state(config.warmup)
            .to_vec()
    } else {
        u0
    };
    let mut tr = run(&start, config.steps, velocity.as_deref())?;
    tr.boundary = BoundaryCondition::Dirichlet {
        value: config.boundary_value,
    };
    tr.source = Some(SourceSpec {
        nodes: patch,
        value: config.source_value,
    });
    Ok(tr)
}

#[derive(Serialize, Deserialize)]
struct TrajectoryHeader {
    format: String,
    steps: usize,
    nodes: usize,
    channels: usize,
    kappa: f64,
    dt: f64,
    boundary: BoundaryCondition,
    source: Option<SourceSpec>,
    node_types: Vec<NodeType>,
    cells: Vec<[usize; 3]>,
    mesh_positions: Vec<[f64; 2]>,
    velocity: Option<Vec<[f64; 2]>>,
}

fn trajectory_bytes(tr: &Trajectory) -> Result<Vec<u8>> {
    let header = TrajectoryHeader {
        format: TRAJECTORY_FORMAT.to_string(),
        steps: tr.steps,
        nodes: tr.node_count(),
        channels: tr.channels,
        kappa: tr.kappa,
        dt: tr.dt,
        boundary: tr.boundary,
        source: tr.source.clone(),
        node_types: tr.mesh.node_types.clone(),
        cells: tr.mesh.cells.clone(),
        mesh_positions: tr.mesh.mesh_positions.clone(),
        velocity: tr.velocity.clone(),
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    bytes.extend_from_slice(&encode_f64s(&tr.fields));
    Ok(bytes)
}

/// Writes a trajectory file and returns its sha256.
pub fn save_trajectory(tr: &Trajectory, path: &Path) -> Result<String> {
    let bytes = trajectory_bytes(tr)?;
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(sha256_hex(&bytes))
}

fn parse_trajectory(bytes: &[u8], path: &Path) -> Result<Trajectory> {
    let fail = |reason: &str| OracleError::Format {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| fail("no header line"))?;
    let header: TrajectoryHeader = serde_json::from_slice(&bytes[..split])?;
    if header.format != TRAJECTORY_FORMAT {
        return Err(fail(&format!("unsupported format {}", header.format)));
    }
    let fields = decode_f64s(&bytes[split + 1..])
        .ok_or_else(|| fail("blob is not a whole number of f64"))?;
    if fields.len() != header.steps * header.nodes * header.channels || header.steps < 2 {
        return Err(fail("blob size does not match the header"));
    }
    let mesh = MeshGraph::from_cells(header.cells, header.mesh_positions, header.node_types)?;
    if mesh.node_count != header.nodes {
        return Err(fail("node count does not match the mesh"));
    }
    Ok(Trajectory {
        mesh,
        steps: header.steps,
        channels: header.channels,
        fields,
        velocity: header.velocity,
        kappa: header.kappa,
        dt: header.dt,
        boundary: header.boundary,
        source: header.source,
    })
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    parse_trajectory(&fs::read(path)?, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub file: String,
    pub sha256: String,
    pub nodes: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub seed: u64,
    pub config: DatasetConfig,
    pub norm_stats: NormStats,
    pub train: Vec<FileEntry>,
    pub val: Vec<FileEntry>,
    pub test: Vec<FileEntry>,
    pub ood: Vec<FileEntry>,
}

impl DatasetManifest {
    pub fn files(&self, split: Split) -> &[FileEntry] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
            Split::Ood => &self.ood,
        }
    }

    fn files_mut(&mut self, split: Split) -> &mut Vec<FileEntry> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
            Split::Ood => &mut self.ood,
        }
    }
}

/// Thread count for data generation and evaluation: `DHMP_THREADS` when it
/// is a positive integer, otherwise the rayon default.
pub fn configured_threads() -> usize {
    std::env::var("DHMP_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Runs `f` on a rayon pool sized by [`configured_threads`].
pub(crate) fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(configured_threads())
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Generates every split into `dir` (which must exist) and writes
/// `manifest.json`. The output depends only on `config` and `seed`.
pub fn make_dataset(config: &DatasetConfig, seed: u64, dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let jobs: Vec<(Split, usize)> = Split::ALL
        .into_iter()
        .flat_map(|s| (0..config.count(s)).map(move |i| (s, i)))
        .collect();
    let trajectories: Vec<Trajectory> = with_pool(|| {
        jobs.par_iter()
            .map(|&(s, i)| generate_trajectory(config, seed, s, i))
            .collect::<Result<Vec<_>>>()
    })?;
    let train: Vec<Trajectory> = jobs
        .iter()
        .zip(&trajectories)
        .filter(|((s, _), _)| *s == Split::Train)
        .map(|(_, t)| t.clone())
        .collect();
    let mut manifest = DatasetManifest {
        format: DATASET_FORMAT.to_string(),
        seed,
        config: config.clone(),
        norm_stats: compute_norm_stats(&train)?,
        train: vec![],
        val: vec![],
        test: vec![],
        ood: vec![],
    };
    for (&(split, index), tr) in jobs.iter().zip(&trajectories) {
        let file = format!("{}_{index:04}.traj", split.name());
        let sha256 = save_trajectory(tr, &dir.join(&file))?;
        manifest.files_mut(split).push(FileEntry {
            file,
            sha256,
            nodes: tr.node_count(),
            steps: tr.steps,
        });
    }
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// A generated dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest: DatasetManifest =
            serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        if manifest.format != DATASET_FORMAT {
            return Err(OracleError::Config(format!(
                "unsupported dataset format {}",
                manifest.format
            )));
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    /// Loads a split, checking each file against its recorded hash.
    pub fn load(&self, split: Split) -> Result<Vec<Trajectory>> {
        self.manifest
            .files(split)
            .iter()
            .map(|entry| {
                let path = self.dir.join(&entry.file);
                let bytes = fs::read(&path)?;
                if sha256_hex(&bytes) != entry.sha256 {
                    return Err(OracleError::Checksum(entry.file.clone()));
                }
                parse_trajectory(&bytes, &path)
            })
            .collect()
    }

    /// Re-hashes every file listed in the manifest.
    pub fn verify(&self) -> Result<()> {
        for split in Split::ALL {
            for entry in self.manifest.files(split) {
                if sha256_hex(&fs::read(self.dir.join(&entry.file))?) != entry.sha256 {
                    return Err(OracleError::Checksum(entry.file.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn norm_stats(&self) -> &NormStats {
        &self.manifest.norm_stats
    }
}
