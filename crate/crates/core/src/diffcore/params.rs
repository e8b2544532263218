use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::tape::{DiffError, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSlice {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl ParamSlice {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Flat trainable parameter vector with named, contiguous slices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    values: Vec<f64>,
    #[serde(skip)]
    grads: Vec<f64>,
    slices: Vec<ParamSlice>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a named block. Names must be unique.
    pub fn push(&mut self, name: impl Into<String>, init: Vec<f64>) -> Range<usize> {
        let name = name.into();
        assert!(
            self.slice(&name).is_none(),
            "duplicate parameter slice `{name}`"
        );
        let start = self.values.len();
        let len = init.len();
        self.values.extend(init);
        self.grads.resize(self.values.len(), 0.0);
        self.slices.push(ParamSlice { name, start, len });
        start..start + len
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn set_values(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.values.len());
        self.values.copy_from_slice(values);
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        if self.grads.len() != self.values.len() {
            self.grads.resize(self.values.len(), 0.0);
        }
        &mut self.grads
    }

    pub fn zero_grads(&mut self) {
        self.grads.clear();
        self.grads.resize(self.values.len(), 0.0);
    }

    pub fn slices(&self) -> &[ParamSlice] {
        &self.slices
    }

    pub fn slice(&self, name: &str) -> Option<&ParamSlice> {
        self.slices.iter().find(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.slice(name).map(|s| &self.values[s.range()])
    }

    /// Register every value as a leaf on `tape`, in order.
    pub fn leaves<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.values.iter().map(|&v| tape.leaf(v)).collect()
    }

    /// Reverse sweep from `loss`, storing `∂loss/∂values` in `grads`.
    /// Parameters that do not reach the loss get exactly zero.
    pub fn backward(&mut self, loss: Var<'_>, leaves: &[Var<'_>]) -> Result<(), DiffError> {
        assert_eq!(leaves.len(), self.values.len());
        let ids: Vec<_> = leaves.iter().map(|v| v.id()).collect();
        let grads = loss.tape().gradient(loss.id(), &ids)?;
        self.grads = grads;
        Ok(())
    }
}
