use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::graph::{Gradients, Graph, Var};
use super::Tensor;

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    /// He-style normal initialization with standard deviation
    /// `sqrt(2 / fan_in)`, scaled by `gain`.
    pub fn normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
        rng: &mut R,
    ) -> ParamId {
        let std = gain * (2.0 / fan_in.max(1) as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        self.add(name, Tensor::from_fn(shape, |_| dist.sample(rng)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Records every tensor as a trainable leaf; the returned vars are
    /// indexed like the set.
    pub fn bind(&self, graph: &mut Graph) -> Vec<Var> {
        self.values.iter().map(|t| graph.param(t.clone())).collect()
    }

    /// Records every tensor as a constant leaf (inference).
    pub fn bind_frozen(&self, graph: &mut Graph) -> Vec<Var> {
        self.values.iter().map(|t| graph.constant(t.clone())).collect()
    }

    /// Gradients of the bound vars, aligned with the set.
    pub fn collect_grads(&self, grads: &mut Gradients, bound: &[Var]) -> Vec<Tensor> {
        bound.iter().map(|v| grads.take(*v)).collect()
    }

    /// Replaces values from `(name, tensor)` pairs; names and shapes must
    /// match exactly.
    pub fn load(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.values.len() {
            return Err(Error::contract(format!(
                "checkpoint holds {} tensors, model expects {}",
                entries.len(),
                self.values.len()
            )));
        }
        for ((name, t), (own_name, own)) in entries.into_iter().zip(self.names.iter().zip(&mut self.values)) {
            if &name != own_name || t.shape() != own.shape() {
                return Err(Error::contract(format!(
                    "checkpoint tensor {name} {:?} does not match {own_name} {:?}",
                    t.shape(),
                    own.shape()
                )));
            }
            *own = t;
        }
        Ok(())
    }
}

/// Elementwise sum of per-sample gradient lists, in order.
pub fn sum_grads(mut acc: Vec<Tensor>, other: &[Tensor]) -> Vec<Tensor> {
    for (a, b) in acc.iter_mut().zip(other) {
        a.add_assign(b);
    }
    acc
}
