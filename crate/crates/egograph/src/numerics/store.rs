//! Named parameter storage with gradient slots.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::matrix::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub value: Matrix,
    pub gradient: Matrix,
}

/// Map from parameter name to (value, gradient). Gradient shape always
/// mirrors the value shape; names are unique. Iteration order is sorted
/// by name, which keeps optimizer updates and serialization deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Matrix) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        let gradient = Matrix::zeros(value.rows(), value.cols());
        self.entries.insert(name.to_string(), ParamEntry { value, gradient });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Result<&Matrix> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    pub fn gradient(&self, name: &str) -> Result<&Matrix> {
        self.entries
            .get(name)
            .map(|e| &e.gradient)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    pub fn gradient_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.gradient)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    pub fn add_to_gradient(&mut self, name: &str, delta: &Matrix) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))?;
        if entry.gradient.shape() != delta.shape() {
            return Err(Error::Shape(format!(
                "gradient shape {:?} does not match parameter '{name}' shape {:?}",
                delta.shape(),
                entry.gradient.shape()
            )));
        }
        entry.gradient.add_assign(delta);
        Ok(())
    }

    pub fn zero_gradients(&mut self) {
        for entry in self.entries.values_mut() {
            entry.gradient.fill(0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar parameter count.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }
}
