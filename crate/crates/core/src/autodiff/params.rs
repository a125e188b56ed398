use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(
                "register",
                format!("parameter {name:?} already registered"),
            ));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Adds `grads` into each tensor's gradient buffer.
    pub fn accumulate(&mut self, grads: &Gradients) {
        assert_eq!(grads.per_param.len(), self.tensors.len());
        for (t, g) in self.tensors.iter_mut().zip(&grads.per_param) {
            if let Some(g) = g {
                for (acc, v) in t.grad_mut().iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// True when names, shapes and values agree (gradients ignored).
    pub fn same_values(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape() && a.data() == b.data())
    }
}

/// Result of one backward pass: a gradient per registered parameter.
///
/// Parameters the loss does not reach hold `None`, which reads as zeros.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub(crate) per_param: Vec<Option<Vec<f32>>>,
    lens: Vec<usize>,
}

impl Gradients {
    pub(crate) fn new(store: &ParamStore) -> Self {
        Self {
            per_param: vec![None; store.len()],
            lens: store.tensors.iter().map(Tensor::len).collect(),
        }
    }

    pub(crate) fn add(&mut self, id: ParamId, g: &[f32]) {
        let slot = self.per_param[id.0].get_or_insert_with(|| vec![0.0; g.len()]);
        for (acc, v) in slot.iter_mut().zip(g) {
            *acc += v;
        }
    }

    /// Gradient for `id`, materialising zeros for unreachable parameters.
    pub fn get(&self, id: ParamId) -> Vec<f32> {
        match &self.per_param[id.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.lens[id.0]],
        }
    }

    pub fn is_reached(&self, id: ParamId) -> bool {
        self.per_param[id.0].is_some()
    }
}
