use std::collections::BTreeMap;
use std::sync::Arc;

use super::graph::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// One trainable array together with its gradient buffer and AdamW state.
#[derive(Debug)]
pub struct Param {
    pub name: String,
    pub(crate) value: Arc<Tensor>,
    pub grad: Tensor,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step: u64,
}

impl Clone for Param {
    /// Deep copy: the clone never shares storage with a graph built from the original.
    fn clone(&self) -> Self {
        Param {
            name: self.name.clone(),
            value: Arc::new(Tensor::clone(&self.value)),
            grad: self.grad.clone(),
            first_moment: self.first_moment.clone(),
            second_moment: self.second_moment.clone(),
            step: self.step,
        }
    }
}

impl Param {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    /// Mutable access to the stored values. Panics if a graph still holds them.
    pub fn value_mut(&mut self) -> &mut Tensor {
        Arc::get_mut(&mut self.value).expect("parameter is still borrowed by a live graph")
    }
}

/// Named parameter storage. A name resolves to exactly one storage slot, so every
/// graph that asks for the same name reads (and writes gradients into) the same array.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        let [r, c] = value.shape();
        let id = self.entries.len();
        self.entries.push(Param {
            name: name.clone(),
            value: Arc::new(value),
            grad: Tensor::zeros(r, c),
            first_moment: Tensor::zeros(r, c),
            second_moment: Tensor::zeros(r, c),
            step: 0,
        });
        self.index.insert(name, id);
        Ok(ParamId(id))
    }

    /// Restores a full entry (used by checkpoint loading).
    pub(crate) fn insert_entry(&mut self, entry: Param) -> Result<ParamId> {
        if self.index.contains_key(&entry.name) {
            return Err(Error::invalid(format!("duplicate parameter name {:?}", entry.name)));
        }
        let id = self.entries.len();
        self.index.insert(entry.name.clone(), id);
        self.entries.push(entry);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| &self.entries[id.0])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        let id = self.id(name)?;
        Some(&mut self.entries[id.0])
    }

    pub fn entry(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.entries[id.0]
    }

    /// The shared handle to a parameter's values (never a copy).
    pub fn shared_value(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.entries[id.0].value)
    }

    /// Entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|p| p.name.as_str())
    }

    /// Total scalar count over entries whose name satisfies `filter`.
    pub fn scalar_count(&self, filter: impl Fn(&str) -> bool) -> usize {
        self.entries
            .iter()
            .filter(|p| filter(&p.name))
            .map(|p| p.value.len())
            .sum()
    }

    /// Adds parameter gradients from a backward sweep into the store's buffers.
    /// Gradients accumulate across calls until [`ParamStore::zero_grad`].
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.params() {
            if let Some(g) = g {
                self.entries[id.0].grad.add_assign(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            p.grad.fill(0.0);
        }
    }
}
