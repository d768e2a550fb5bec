use serde::{Deserialize, Serialize};

use super::{Gradients, Matrix, Result, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
}

/// Trainable parameters in registration order. The order is the
/// serialisation order of checkpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(k, p)| (ParamId(k), p))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.params.iter_mut().map(|p| &mut p.value)
    }

    /// Total scalar count.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.data.len()).sum()
    }

    /// Every parameter flattened in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.data.iter().copied())
            .collect()
    }

    /// Overwrites values from a flat buffer; returns false on length mismatch.
    pub fn load_flat(&mut self, flat: &[f64]) -> bool {
        if flat.len() != self.scalar_count() {
            return false;
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.data.len();
            p.value.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        true
    }

    /// Records every parameter as a gradient-carrying leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundParams> {
        let tensors = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), true))
            .collect::<Result<_>>()?;
        Ok(BoundParams { tensors })
    }
}

/// Tape handles of a [`ParamStore`] for one pass.
#[derive(Debug, Clone)]
pub struct BoundParams {
    tensors: Vec<Tensor>,
}

impl BoundParams {
    pub fn get(&self, id: ParamId) -> Tensor {
        self.tensors[id.0]
    }

    /// Gradients for every parameter, zeros where nothing flowed.
    pub fn collect(&self, grads: &Gradients) -> Vec<Matrix> {
        self.tensors
            .iter()
            .map(|&t| grads.get_or_zeros(t))
            .collect()
    }
}
