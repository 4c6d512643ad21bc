use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Named learnable tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> Default for ModelParams<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn new() -> Self {
        ModelParams {
            names: Vec::new(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::usage(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Insert every tensor into `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundParams {
        BoundParams {
            vars: self.tensors.iter().map(|t| g.param(t.clone())).collect(),
            index: self.index.clone(),
        }
    }

    /// Insert every tensor as a constant, for inference.
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> BoundParams {
        BoundParams {
            vars: self.tensors.iter().map(|t| g.constant(t.clone())).collect(),
            index: self.index.clone(),
        }
    }

    /// Use leaves already in a graph, one per tensor in parameter order.
    pub fn bind_vars<T2: Scalar>(&self, g: &Graph<T2>, vars: &[Var]) -> Result<BoundParams> {
        if vars.len() != self.tensors.len()
            || vars.iter().zip(&self.tensors).any(|(&v, t)| g.shape(v) != t.shape())
        {
            return Err(Error::usage("bound variables do not match the parameter layout"));
        }
        Ok(BoundParams {
            vars: vars.to_vec(),
            index: self.index.clone(),
        })
    }

    /// Same names, same shapes, in the same order.
    pub fn same_layout<U: Scalar>(&self, other: &ModelParams<U>) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(other.tensors())
                .all(|(a, b)| a.shape() == b.shape())
    }
}

/// Graph handles for a [`ModelParams`], in the same order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
    index: BTreeMap<String, usize>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::usage(format!("missing parameter {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients after `g.backward`, in parameter order. Parameters the root
    /// does not depend on get zeros.
    pub fn grads<T: Scalar>(&self, g: &Graph<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .map(|&v| g.grad(v).unwrap_or_else(|| Tensor::zeros(g.shape(v))))
            .collect()
    }
}
