//! Named trainable parameters and their gradient buffers.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Owns every parameter of a model. Layers refer to entries by [`ParamId`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let grad = Tensor::zeros(value.shape());
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    /// Replaces a value, keeping the shape contract.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::dim(
                "set_value",
                format!(
                    "{}: expected {:?}, got {:?}",
                    p.name,
                    p.value.shape(),
                    value.shape()
                ),
            ));
        }
        p.value = value;
        Ok(())
    }

    pub(crate) fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub(crate) fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in &mut self.params {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
            }
        }
        norm
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Gradients produced by one backward pass, keyed by parameter.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub(crate) entries: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.entries.iter().find(|(i, _)| *i == id).map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.entries.iter().map(|(i, g)| (*i, g))
    }

    /// Adds these gradients onto the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (id, g) in &self.entries {
            let buf = store.grad_mut(*id);
            for (b, v) in buf.data_mut().iter_mut().zip(g.data()) {
                *b += v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(s.add("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn zero_grad_and_clip() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::zeros(&[2])).unwrap();
        s.grad_mut(id).data_mut().copy_from_slice(&[3.0, 4.0]);
        assert_eq!(s.grad_norm(), 5.0);
        let before = s.clip_grad_norm(1.0);
        assert_eq!(before, 5.0);
        assert!((s.grad_norm() - 1.0).abs() < 1e-12);
        s.zero_grad();
        assert_eq!(s.get(id).grad.data(), &[0.0, 0.0]);
        assert_eq!(s.get(id).grad.shape(), s.get(id).value.shape());
    }
}
