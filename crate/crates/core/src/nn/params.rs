use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::{Error, Result};

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

fn next_uid() -> u64 {
    NEXT_UID.fetch_add(1, Ordering::Relaxed)
}

/// Index of a tensor inside its [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named weights with a matching gradient buffer per tensor.
///
/// Each set carries a process-unique id so a [`Tape`](super::Tape) can pull
/// tensors from several sets and route gradients back to the right one.
/// Cloning produces a set with a fresh id (target networks are clones).
#[derive(Debug, Serialize, Deserialize)]
#[serde(from = "StoredParams", into = "StoredParams")]
pub struct ParameterSet {
    uid: u64,
    names: Vec<String>,
    values: Vec<Matrix>,
    grads: Vec<Matrix>,
}

#[derive(Serialize, Deserialize)]
struct StoredParams {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl From<StoredParams> for ParameterSet {
    fn from(s: StoredParams) -> Self {
        let grads = s
            .values
            .iter()
            .map(|v| Matrix::zeros(v.rows(), v.cols()))
            .collect();
        Self {
            uid: next_uid(),
            names: s.names,
            values: s.values,
            grads,
        }
    }
}

impl From<ParameterSet> for StoredParams {
    fn from(p: ParameterSet) -> Self {
        Self {
            names: p.names,
            values: p.values,
        }
    }
}

impl Clone for ParameterSet {
    fn clone(&self) -> Self {
        Self {
            uid: next_uid(),
            names: self.names.clone(),
            values: self.values.clone(),
            grads: self.grads.clone(),
        }
    }
}

impl Default for ParameterSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self {
            uid: next_uid(),
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let id = ParamId(self.values.len());
        self.grads.push(Matrix::zeros(value.rows(), value.cols()));
        self.names.push(name.into());
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.grads[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Matrix::sum_sq).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::all_finite)
    }

    /// Flat view of scalar `k` across all tensors, in insertion order.
    pub fn scalar_location(&self, mut k: usize) -> Option<(ParamId, usize)> {
        for (i, v) in self.values.iter().enumerate() {
            if k < v.len() {
                return Some((ParamId(i), k));
            }
            k -= v.len();
        }
        None
    }

    /// Check that `other` has the same names and shapes.
    pub fn check_compatible(&self, other: &ParameterSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Schema("parameter names differ".into()));
        }
        for (a, b) in self.values.iter().zip(&other.values) {
            if a.shape() != b.shape() {
                return Err(Error::Schema("parameter shapes differ".into()));
            }
        }
        Ok(())
    }

    pub fn copy_values_from(&mut self, other: &ParameterSet) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.data_mut().copy_from_slice(b.data());
        }
    }

    /// `self ← (1 − τ)·self + τ·online`.
    pub fn polyak_toward(&mut self, online: &ParameterSet, tau: f64) {
        for (t, o) in self.values.iter_mut().zip(&online.values) {
            for (x, &y) in t.data_mut().iter_mut().zip(o.data()) {
                *x = (1.0 - tau) * *x + tau * y;
            }
        }
    }

    /// Euclidean distance between two compatible sets.
    pub fn distance(&self, other: &ParameterSet) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }
}
