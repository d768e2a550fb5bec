use serde::{Deserialize, Serialize};

use super::{OracleError, Result, Trajectory};
use crate::autodiff::Matrix;
use crate::mesh::{compute_edge_offsets, MeshMode};

/// Per-channel affine normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Population mean and standard deviation of each column of a row-major
    /// sample stream. Degenerate channels get std 1.
    pub fn from_rows<'a>(width: usize, rows: impl Iterator<Item = &'a [f64]>) -> Self {
        let mut count = 0usize;
        let mut mean = vec![0.0; width];
        let mut m2 = vec![0.0; width];
        for row in rows {
            count += 1;
            for k in 0..width {
                let d = row[k] - mean[k];
                mean[k] += d / count as f64;
                m2[k] += d * (row[k] - mean[k]);
            }
        }
        let std = m2
            .iter()
            .map(|&s| {
                let sd = (s / count.max(1) as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        ChannelStats { mean, std }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, data: &mut [f64]) {
        let w = self.width();
        for (k, v) in data.iter_mut().enumerate() {
            *v = (*v - self.mean[k % w]) / self.std[k % w];
        }
    }

    pub fn denormalize(&self, data: &mut [f64]) {
        let w = self.width();
        for (k, v) in data.iter_mut().enumerate() {
            *v = *v * self.std[k % w] + self.mean[k % w];
        }
    }
}

/// Normalisation of node inputs (field and velocity channels), of the
/// input-mesh edge offsets and of the one-step deltas, from the training
/// split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub inputs: ChannelStats,
    pub edges: ChannelStats,
    pub targets: ChannelStats,
}

pub fn compute_norm_stats(trajectories: &[Trajectory]) -> Result<NormStats> {
    let first = trajectories.first().ok_or(OracleError::NoTrajectories)?;
    let (iw, c) = (first.input_width(), first.channels);
    if let Some(bad) = trajectories
        .iter()
        .find(|t| t.input_width() != iw || t.channels != c)
    {
        return Err(OracleError::LengthMismatch {
            what: "input channels",
            got: bad.input_width(),
            expected: iw,
        });
    }
    let inputs: Vec<Matrix> = trajectories
        .iter()
        .flat_map(|tr| (0..tr.steps - 1).map(move |t| tr.inputs(t)))
        .collect();
    let deltas: Vec<Vec<f64>> = trajectories
        .iter()
        .flat_map(|tr| (0..tr.steps - 1).map(move |t| tr.delta(t)))
        .collect();
    let mode = MeshMode::Eulerian;
    let offsets: Vec<Vec<f64>> = trajectories
        .iter()
        .map(|tr| {
            let m = &tr.mesh;
            compute_edge_offsets(&m.edges, &m.mesh_positions, &m.world_positions, mode).values
        })
        .collect();
    let ew = mode.offset_width();
    Ok(NormStats {
        inputs: ChannelStats::from_rows(iw, inputs.iter().flat_map(|m| m.data.chunks_exact(iw))),
        edges: ChannelStats::from_rows(ew, offsets.iter().flat_map(|o| o.chunks_exact(ew))),
        targets: ChannelStats::from_rows(c, deltas.iter().flat_map(|d| d.chunks_exact(c))),
    })
}
