use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, TrainConfig, TrainError, Trainer};
use crate::autodiff::{Adam, AdamConfig};
use crate::blob::{decode_f64s, encode_f64s, sha256_hex};
use crate::model::{Model, ModelConfig};
use crate::oracle::NormStats;

const FORMAT: &str = "dhmp-checkpoint/1";

/// Header line of a checkpoint file. The blob after it holds the parameter
/// values followed by Adam's first and second moments, in registration
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    /// Completed optimizer steps; every random draw after this point is
    /// keyed by `(train_config.seed, step)`, so this is the full RNG state.
    pub step: u64,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub norm_stats: NormStats,
    pub adam_config: AdamConfig,
    pub adam_step: u64,
    pub param_count: usize,
    /// Hash of the dataset manifest the model was trained on.
    pub dataset_sha256: Option<String>,
    pub blob_sha256: String,
}

pub fn save_checkpoint(
    trainer: &Trainer,
    dataset_sha256: Option<&str>,
    path: &Path,
) -> Result<String> {
    let mut values = trainer.model.params.flatten();
    let param_count = values.len();
    values.extend(trainer.adam.m.iter().flatten());
    values.extend(trainer.adam.v.iter().flatten());
    let blob = encode_f64s(&values);
    let header = Checkpoint {
        format: FORMAT.to_string(),
        step: trainer.step,
        model_config: trainer.model.config.clone(),
        train_config: trainer.config.clone(),
        norm_stats: trainer.norm.clone(),
        adam_config: trainer.adam.config,
        adam_step: trainer.adam.step,
        param_count,
        dataset_sha256: dataset_sha256.map(str::to_string),
        blob_sha256: sha256_hex(&blob),
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    bytes.extend_from_slice(&blob);
    fs::write(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Trainer)> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| TrainError::Checkpoint(format!("{}: {m}", path.display()));
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header"))?;
    let header: Checkpoint = serde_json::from_slice(&bytes[..split])?;
    if header.format != FORMAT {
        return Err(bad(&format!("unsupported format {}", header.format)));
    }
    let blob = &bytes[split + 1..];
    if sha256_hex(blob) != header.blob_sha256 {
        return Err(bad("parameter blob does not match its hash"));
    }
    let values = decode_f64s(blob).ok_or_else(|| bad("truncated blob"))?;
    let n = header.param_count;
    if values.len() != 3 * n {
        return Err(bad("blob length does not match the parameter count"));
    }
    let mut model = Model::from_flat(header.model_config.clone(), &values[..n])?;
    model.set_edge_norm(header.norm_stats.edges.clone())?;
    let mut adam = Adam::with_config(&model.params, header.adam_config);
    adam.step = header.adam_step;
    let mut offset = n;
    for buf in adam.m.iter_mut().chain(adam.v.iter_mut()) {
        let len = buf.len();
        buf.copy_from_slice(&values[offset..offset + len]);
        offset += len;
    }
    header.train_config.validate()?;
    let trainer = Trainer {
        model,
        adam,
        config: header.train_config.clone(),
        norm: header.norm_stats.clone(),
        step: header.step,
    };
    Ok((header, trainer))
}
