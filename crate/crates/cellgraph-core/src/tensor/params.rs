//! Named parameter collections shared by the GNN and CPC models.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape, Tensor};

/// Ordered name → tensor map; iteration order is the sorted name order,
/// which keeps initialization, checkpoints, and optimizer state stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t.with_grad());
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total scalar count across all tensors.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Places every parameter on `tape`, returning name → node handles.
    pub fn stage(&self, tape: &mut Tape) -> Result<BTreeMap<String, NodeId>> {
        let mut ids = BTreeMap::new();
        for (name, t) in &self.tensors {
            ids.insert(name.clone(), tape.leaf(t)?);
        }
        Ok(ids)
    }

    /// Pulls gradients for every staged parameter off a finished tape.
    /// Parameters the loss does not reach get zero gradients.
    pub fn gradients(
        &self,
        tape: &Tape,
        ids: &BTreeMap<String, NodeId>,
    ) -> Result<BTreeMap<String, Tensor>> {
        let mut grads = BTreeMap::new();
        for (name, t) in &self.tensors {
            let id = ids
                .get(name)
                .ok_or_else(|| Error::Config(format!("parameter `{name}` was not staged")))?;
            let g = tape
                .grad_tensor(*id)
                .unwrap_or_else(|| Tensor::zeros(t.shape()));
            grads.insert(name.clone(), g);
        }
        Ok(grads)
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        let mut set = ParamSet::new();
        for (k, v) in iter {
            set.insert(k, v);
        }
        set
    }
}
