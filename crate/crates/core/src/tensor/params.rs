//! Named parameter collections.

use std::collections::BTreeMap;

use super::{Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// Map from parameter path to tensor. Iteration order is sorted by name,
/// which makes initialization draws and optimizer sweeps deterministic.
#[derive(Clone, Default)]
pub struct ParamSet<T: Scalar> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            map: BTreeMap::new(),
        }
    }

    /// Inserts a parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        let name = name.into();
        let prev = self.map.insert(name.clone(), tensor);
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.map.get(name).ok_or(TensorError::ShapeMismatch {
            op: "params",
            detail: format!("unknown parameter {name}"),
        })
    }

    /// Replaces an existing parameter's tensor.
    pub fn set(&mut self, name: &str, tensor: Tensor<T>) {
        let slot = self
            .map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        *slot = tensor;
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar elements across all parameters.
    pub fn element_count(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    /// Copy of the set with one parameter's data replaced (used by the
    /// finite-difference checker; the replacement is an untracked leaf).
    pub fn with_replaced(&self, name: &str, data: Vec<T>) -> Result<Self> {
        let shape = self.get(name)?.shape().to_vec();
        let mut out = self.clone();
        out.set(name, Tensor::new(&shape, data)?);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iteration_is_sorted_by_name() {
        let mut p = ParamSet::<f64>::new();
        p.insert("b", Tensor::zeros(&[1]));
        p.insert("a", Tensor::zeros(&[2]));
        p.insert("c", Tensor::zeros(&[3]));
        let names: Vec<_> = p.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["a", "b", "c"]);
        assert_eq!(p.element_count(), 6);
    }
}
