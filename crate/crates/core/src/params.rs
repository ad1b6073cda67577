//! Named parameter registries and gradient maps.
//!
//! Parameters are addressed by stable path strings such as
//! `layers.1.attn.query`, so every update can be attributed to a matrix.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    entries: Vec<(String, Tensor<T>)>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let path = path.into();
        if self.index.contains_key(&path) {
            return Err(Error::State(format!("parameter {path} registered twice")));
        }
        self.index.insert(path.clone(), self.entries.len());
        self.entries.push((path, tensor));
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&Tensor<T>> {
        self.index.get(path).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor<T>> {
        self.index.get(path).map(|&i| &mut self.entries[i].1)
    }

    /// Like [`get`](Self::get) but a missing path is an error.
    pub fn require(&self, path: &str) -> Result<&Tensor<T>> {
        self.get(path)
            .ok_or_else(|| Error::State(format!("missing parameter {path}")))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.index.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(p, t)| (p.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(p, t)| (p.as_str(), t))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(p, _)| p.as_str())
    }

    pub fn set_requires_grad(&mut self, pred: impl Fn(&str) -> bool) {
        for (p, t) in &mut self.entries {
            t.requires_grad = pred(p);
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|(_, t)| t.requires_grad)
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// SHA-256 over paths, shapes and values of every parameter matching `pred`.
    pub fn hash_where(&self, pred: impl Fn(&str) -> bool) -> String {
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();
        for (p, t) in self.entries.iter().filter(|(p, _)| pred(p)) {
            buf.clear();
            buf.extend_from_slice(p.as_bytes());
            buf.push(0);
            t.write_bytes(&mut buf);
            hasher.update(&buf);
        }
        hex(&hasher.finalize())
    }

    pub fn hash(&self) -> String {
        self.hash_where(|_| true)
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(p, t)| (p.clone(), t.cast()))
                .collect(),
            index: self.index.clone(),
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Gradients keyed by parameter path.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradMap<T: Real = f32> {
    grads: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> GradMap<T> {
    pub fn new() -> Self {
        GradMap {
            grads: BTreeMap::new(),
        }
    }

    pub fn get(&self, path: &str) -> Option<&Tensor<T>> {
        self.grads.get(path)
    }

    pub fn insert(&mut self, path: impl Into<String>, grad: Tensor<T>) {
        self.grads.insert(path.into(), grad);
    }

    /// Adds `grad` into the entry for `path`, creating it when absent.
    pub fn accumulate(&mut self, path: &str, grad: &Tensor<T>) -> Result<()> {
        match self.grads.get_mut(path) {
            Some(acc) => {
                if acc.shape() != grad.shape() {
                    return Err(Error::dim("grad accumulate", acc.shape(), grad.shape()));
                }
                for (a, &g) in acc.data_mut().iter_mut().zip(grad.data()) {
                    *a = *a + g;
                }
            }
            None => {
                self.grads.insert(path.to_string(), grad.clone());
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &GradMap<T>) -> Result<()> {
        for (p, g) in &other.grads {
            self.accumulate(p, g)?;
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.grads.iter().map(|(p, t)| (p.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds zero-filled entries for every trainable store parameter missing here.
    pub fn fill_missing(&mut self, store: &ParamStore<T>) {
        for (p, t) in store.iter() {
            if t.requires_grad && !self.grads.contains_key(p) {
                self.grads.insert(p.to_string(), Tensor::zeros(t.shape()));
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(Tensor::all_finite)
    }
}
