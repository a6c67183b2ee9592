use crate::error::{AutodiffError, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    tensor: Tensor,
    trainable: bool,
}

/// Named parameter tensors owned outside any tape.
///
/// A forward pass binds the store onto a fresh tape; frozen entries become
/// constants, so they never receive gradients.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

/// Tape variables for every entry of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> ParamId {
        self.entries.push(Entry { name: name.into(), tensor, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, id: ParamId, tensor: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.tensor.shape() != tensor.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "set",
                expected: entry.tensor.shape().to_vec(),
                found: tensor.shape().to_vec(),
            });
        }
        entry.tensor = tensor;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    /// Number of trainable scalars.
    pub fn trainable_len(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.len()).sum()
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e.tensor.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self.entries.iter().map(|e| tape.leaf(e.tensor.clone(), e.trainable)).collect();
        Bound { vars }
    }

    /// Gradients aligned with store entries; zeros for frozen or unused entries.
    pub fn grads(&self, bound: &Bound, grads: &Gradients) -> Vec<Tensor> {
        self.entries
            .iter()
            .zip(&bound.vars)
            .map(|(e, &v)| if e.trainable { grads.get_or_zeros(v, &e.tensor) } else { Tensor::zeros(e.tensor.shape()) })
            .collect()
    }

    /// All trainable values concatenated in store order.
    pub fn flatten_trainable(&self) -> Vec<f64> {
        self.entries.iter().filter(|e| e.trainable).flat_map(|e| e.tensor.data().iter().copied()).collect()
    }

    /// Inverse of [`ParamStore::flatten_trainable`].
    pub fn assign_trainable(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.trainable_len() {
            return Err(AutodiffError::DataLength {
                shape: vec![self.trainable_len()],
                expected: self.trainable_len(),
                found: values.len(),
            });
        }
        let mut offset = 0;
        for e in self.entries.iter_mut().filter(|e| e.trainable) {
            let n = e.tensor.len();
            e.tensor.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `(name, tensor, trainable)` for serialization.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, bool)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.tensor, e.trainable))
    }
}

/// Flattens per-entry gradients in the same order as [`ParamStore::flatten_trainable`].
pub fn flatten_trainable_grads(store: &ParamStore, grads: &[Tensor]) -> Vec<f64> {
    store.ids().filter(|&id| store.is_trainable(id)).flat_map(|id| grads[id.0].data().iter().copied()).collect()
}
