use std::collections::HashMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors with insertion-ordered iteration.
///
/// Also used as the gradient map returned by backward passes: a gradient
/// map has exactly the names and shapes of the parameters it differentiates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index_of(name)
            .map(|i| &self.entries[i].1)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index_of(name) {
            Some(i) => Ok(&mut self.entries[i].1),
            None => Err(Error::MissingParam(name.to_string())),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = Self::new();
        for (n, t) in &self.entries {
            out.index.insert(n.clone(), out.entries.len());
            out.entries.push((n.clone(), Tensor::zeros(t.shape())));
        }
        out
    }

    /// All values concatenated in iteration order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for (_, t) in &self.entries {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten), keeping this set's names and shapes.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_scalars() {
            return Err(Error::invalid(format!(
                "flat buffer has {} values, parameter set has {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut out = self.zeros_like();
        let mut offset = 0;
        for (_, t) in out.entries.iter_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    /// Parameters whose name starts with `prefix`, cloned.
    pub fn subset(&self, prefix: &str) -> Self {
        let mut out = Self::new();
        for (n, t) in &self.entries {
            if n.starts_with(prefix) {
                out.index.insert(n.clone(), out.entries.len());
                out.entries.push((n.clone(), t.clone()));
            }
        }
        out
    }

    /// Overwrites (or adds) every entry of `other` in this set.
    pub fn merge(&mut self, other: ParamSet) -> Result<()> {
        for (n, t) in other.entries {
            match self.index_of(&n) {
                Some(i) => self.entries[i].1 = t,
                None => self.insert(n, t)?,
            }
        }
        Ok(())
    }

    /// Checks that `other` has identical names (in order) and shapes.
    pub fn check_aligned(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::invalid(format!(
                "parameter sets differ in size: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.entries.iter().zip(&other.entries) {
            if na != nb {
                return Err(Error::invalid(format!(
                    "parameter name mismatch: `{na}` vs `{nb}`"
                )));
            }
            if ta.shape() != tb.shape() {
                return Err(Error::ShapeMismatch {
                    op: "param alignment",
                    lhs: ta.shape().to_vec(),
                    rhs: tb.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// `self += alpha * other` entrywise.
    pub fn axpy(&mut self, alpha: f64, other: &ParamSet) -> Result<()> {
        self.check_aligned(other)?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, t) in self.entries.iter_mut() {
            for v in t.data_mut() {
                *v *= alpha;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, (_, t)| m.max(t.max_abs()))
    }
}
