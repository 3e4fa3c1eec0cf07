use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor. Frozen parameters always carry zero gradients
/// and are skipped by the optimizer.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub frozen: bool,
}

/// Ordered collection of named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::Contract(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Param {
            name: name.clone(),
            value,
            grad,
            frozen: false,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    /// Weight `[fan_in, fan_out]` drawn Kaiming-uniform with bound
    /// `1/sqrt(fan_in)` (the usual default for linear layers).
    pub fn kaiming(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut SplitMix64) -> Result<ParamId> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.add(name, Tensor::uniform([fan_in, fan_out], -bound, bound, rng))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Freeze every parameter whose name starts with `prefix`.
    pub fn freeze_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = true;
            n += 1;
        }
        n
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Overwrite values from another store with the same names and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .by_name(&p.name)
                .ok_or_else(|| TensorError::Format(format!("missing parameter {}", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(TensorError::Shape {
                    op: "load_values",
                    lhs: p.value.shape().to_vec(),
                    rhs: src.value.shape().to_vec(),
                });
            }
            p.value = src.value.clone();
            p.frozen = src.frozen;
        }
        Ok(())
    }
}
