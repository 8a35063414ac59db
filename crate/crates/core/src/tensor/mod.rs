//! Dense f64 tensors with a tape-based reverse-mode autodiff engine.
//!
//! A [`Graph`] records operations in execution order. Every node owns its
//! forward value; [`Graph::backward`] walks the tape in reverse and returns
//! the gradient of every node that requires one. Parameters live outside
//! the graph in a [`ParamSet`] and are bound into a fresh graph per step, so
//! independent graphs never share mutable state.

mod conv;
mod graph;
mod ops;
mod optim;
mod params;

pub use conv::{conv3d_forward, conv3d_transposed_forward, conv_output_size};
pub use graph::{CustomOp, Gradients, Graph, Var};
pub use ops::Activation;
pub use optim::{Adam, AdamState};
pub use params::{sum_grads, ParamId, ParamSet};

use crate::error::{Error, Result};

/// Row-major dense tensor of 64-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} holds {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Builds an `N x 3` tensor from point coordinates.
    pub fn from_points(points: &[[f64; 3]]) -> Self {
        Self {
            shape: vec![points.len(), 3],
            data: points.iter().flatten().copied().collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Reads rows of an `N x 3` tensor back as points.
    pub fn to_points(&self) -> Result<Vec<[f64; 3]>> {
        if self.shape.len() != 2 || self.shape[1] != 3 {
            return Err(Error::dim("to_points", format!("{:?}", self.shape)));
        }
        Ok(self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}
