//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks the records in reverse and returns per-node gradient buffers. Graph
//! primitives (`gather_rows`, `scatter_add_rows`, `segment_softmax`) make
//! message passing expressible on the same tape.

mod adam;
mod gumbel;
mod matrix;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use gumbel::{gumbel_from_uniform, gumbel_softmax_st, GumbelSample};
pub use matrix::Matrix;
pub use params::{BoundParams, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Tensor};

pub(crate) use tape::sigmoid;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("{op}: index {index} out of range for {len} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("segment ids must be sorted non-decreasing")]
    UnsortedSegments,
    #[error("backward needs a 1x1 loss, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
