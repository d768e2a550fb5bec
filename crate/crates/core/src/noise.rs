//! Counter-keyed random streams.
//!
//! Every random draw in the library is a pure function of a seed and a tuple
//! of integer keys (step, level, node, ...), so results do not depend on the
//! order in which draws happen and a run can resume from any step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gumbel_from_uniform;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a key tuple into one 64-bit value.
pub fn mix(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix(seed), |h, &k| splitmix(h ^ splitmix(k)))
}

/// A ChaCha stream for the given seed and keys.
pub fn stream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, keys))
}

/// Uniform sample in the open interval (0, 1).
pub fn keyed_uniform(seed: u64, keys: &[u64]) -> f64 {
    ((mix(seed, keys) >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Source of Gumbel perturbations for node selection. `node_key` is the
/// node's index in the finest mesh, so coarse levels draw consistently.
pub trait SelectionNoise {
    fn gumbel(&self, level: usize, node_key: usize) -> [f64; 2];
}

/// Deterministic argmax selection.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl SelectionNoise for ZeroNoise {
    fn gumbel(&self, _level: usize, _node_key: usize) -> [f64; 2] {
        [0.0, 0.0]
    }
}

/// Gumbel noise keyed by `(seed, step, level, node_key, class)`.
#[derive(Debug, Clone, Copy)]
pub struct KeyedNoise {
    pub seed: u64,
    pub step: u64,
}

impl KeyedNoise {
    pub fn new(seed: u64, step: u64) -> Self {
        KeyedNoise { seed, step }
    }
}

impl SelectionNoise for KeyedNoise {
    fn gumbel(&self, level: usize, node_key: usize) -> [f64; 2] {
        let draw = |class: u64| {
            gumbel_from_uniform(keyed_uniform(
                self.seed,
                &[self.step, level as u64, node_key as u64, class],
            ))
        };
        [draw(0), draw(1)]
    }
}

/// Re-keys another source through a node relabelling: node `k` of the
/// relabelled mesh draws what node `original_of[k]` would have drawn.
pub struct PermutedNoise<'a, N: SelectionNoise> {
    pub inner: &'a N,
    pub original_of: Vec<usize>,
}

impl<N: SelectionNoise> SelectionNoise for PermutedNoise<'_, N> {
    fn gumbel(&self, level: usize, node_key: usize) -> [f64; 2] {
        self.inner.gumbel(level, self.original_of[node_key])
    }
}

/// Fixed per-node perturbations, keyed by node only (all levels share them).
pub struct TableNoise(pub Vec<[f64; 2]>);

impl SelectionNoise for TableNoise {
    fn gumbel(&self, _level: usize, node_key: usize) -> [f64; 2] {
        self.0[node_key]
    }
}
