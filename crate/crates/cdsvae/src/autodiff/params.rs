//! Named parameter storage.
//!
//! Parameters live outside any tape. Each training step binds them onto a
//! fresh tape as leaves, runs forward/backward, then reads the gradients back
//! out by binding order. Names are stable identifiers used by checkpoints.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            value,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Replaces a parameter value; dims must match.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let cur = &self.entries[id.0];
        if cur.value.dims() != value.dims() {
            return Err(Error::Shape {
                op: "param_set",
                lhs: cur.value.dims().to_vec(),
                rhs: value.dims().to_vec(),
            });
        }
        self.entries[id.0].value = value;
        Ok(())
    }

    /// Snapshots every parameter onto the tape as a leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        BoundParams {
            vars: self.entries.iter().map(|e| tape.leaf(&e.value)).collect(),
        }
    }
}

/// Tape handles for one binding of a [`ParamStore`], aligned by id.
pub struct BoundParams<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> BoundParams<'t> {
    pub fn get(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    /// Gradients for every parameter, in store order. Parameters the loss
    /// never touched get zero gradients; calling this before backward is an
    /// error.
    pub fn grads(&self) -> Result<Vec<Tensor>> {
        self.vars.iter().map(|v| v.grad()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(store.add("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn bind_and_read_grads() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        let unused = store.add("b", Tensor::zeros(&[3])).unwrap();
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let loss = bound.get(w).mul_scalar(3.0).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        let grads = bound.grads().unwrap();
        assert_eq!(grads[0].data(), &[3.0, 3.0]);
        assert_eq!(grads[1].data(), &[0.0, 0.0, 0.0]);
        let _ = unused;
    }

    #[test]
    fn set_rejects_shape_change() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::zeros(&[2, 2])).unwrap();
        assert!(store.set(w, Tensor::zeros(&[4])).is_err());
        assert!(store.set(w, Tensor::zeros(&[2, 2])).is_ok());
    }
}
