use std::sync::Arc;

use indexmap::IndexMap;

use super::{Gradients, Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Named tensors in insertion order. Values are shared with any graph that
/// binds them, so binding a store is cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    tensors: IndexMap<String, Arc<Tensor<T>>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self { tensors: IndexMap::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), Arc::new(t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name).map(Arc::as_ref)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name).map(Arc::make_mut)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Puts a parameter on the graph, as a gradient-tracked leaf when `trainable`.
    pub fn bind(&self, g: &mut Graph<T>, name: &str, trainable: bool) -> Result<Var> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
        let t = Arc::clone(t);
        Ok(if trainable { g.variable(t) } else { g.constant(t) })
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), Arc::new(v.cast()))).collect(),
        }
    }
}

/// Graph variables bound for one forward pass, keyed by parameter name.
#[derive(Debug, Default, Clone)]
pub struct Bindings {
    vars: IndexMap<String, Var>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind<T: Scalar>(&mut self, store: &ParamStore<T>, g: &mut Graph<T>, name: &str, trainable: bool) -> Result<Var> {
        let v = store.bind(g, name, trainable)?;
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Collects per-parameter gradients (zeros for parameters the loss ignores).
    pub fn gradients<T: Scalar>(&self, g: &Graph<T>, grads: &Gradients<T>) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, v) in self.iter() {
            out.insert(name, grads.get_or_zeros(g, v));
        }
        out
    }
}
