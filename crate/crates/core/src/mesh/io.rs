use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MeshError, MeshGraph, MeshMode, NodeType, Result};
use crate::blob;

/// JSON half of the on-disk mesh format. The sidecar blob holds
/// `[mesh_positions | world_positions]`, row-major little-endian f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshManifest {
    pub node_count: usize,
    pub cells: Vec<[usize; 3]>,
    pub node_types: Vec<NodeType>,
    pub mode: MeshMode,
    pub blob_sha256: String,
}

/// Writes `<stem>.json` and `<stem>.bin` into `dir`.
pub fn save_mesh(mesh: &MeshGraph, mode: MeshMode, dir: &Path, stem: &str) -> Result<MeshManifest> {
    let mut flat = Vec::with_capacity(4 * mesh.node_count);
    flat.extend(mesh.mesh_positions.iter().flatten());
    flat.extend(mesh.world_positions.iter().flatten());
    let bytes = blob::encode_f64s(&flat);
    let manifest = MeshManifest {
        node_count: mesh.node_count,
        cells: mesh.cells.clone(),
        node_types: mesh.node_types.clone(),
        mode,
        blob_sha256: blob::sha256_hex(&bytes),
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{stem}.bin")), bytes)?;
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

pub fn load_mesh(dir: &Path, stem: &str) -> Result<(MeshGraph, MeshMode)> {
    let manifest: MeshManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let bytes = fs::read(dir.join(format!("{stem}.bin")))?;
    if blob::sha256_hex(&bytes) != manifest.blob_sha256 {
        return Err(MeshError::Checksum);
    }
    let flat = blob::decode_f64s(&bytes).ok_or(MeshError::Checksum)?;
    let n = manifest.node_count;
    if flat.len() != 4 * n {
        return Err(MeshError::LengthMismatch {
            what: "position blob",
            got: flat.len(),
            expected: 4 * n,
        });
    }
    let pairs: Vec<[f64; 2]> = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    let mesh = MeshGraph::from_cells(manifest.cells, pairs[..n].to_vec(), manifest.node_types)?
        .with_world_positions(pairs[n..].to_vec())?;
    Ok((mesh, manifest.mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_grid_mesh;

    #[test]
    fn save_load_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = generate_grid_mesh(4, 3, 0.2, 5).unwrap();
        save_mesh(&mesh, MeshMode::Eulerian, dir.path(), "m").unwrap();
        let (back, mode) = load_mesh(dir.path(), "m").unwrap();
        assert_eq!(back, mesh);
        assert_eq!(mode, MeshMode::Eulerian);

        let bin = dir.path().join("m.bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes[3] ^= 1;
        fs::write(&bin, bytes).unwrap();
        assert!(matches!(
            load_mesh(dir.path(), "m"),
            Err(MeshError::Checksum)
        ));
    }
}
