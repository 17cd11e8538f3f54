//! Dense row-major `f64` tensors and a reverse-mode gradient tape.
//!
//! [`Tensor`] is a plain value. Differentiable computation happens on a
//! [`Graph`], which records every operation as a node and hands back a
//! lightweight [`Var`] handle. A graph lives for one forward/backward pass
//! and is then dropped; training builds a fresh one per step.
//!
//! ```
//! use hyvae_core::tensor::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::scalar(3.0));
//! let y = g.square(x);
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
//! ```

mod graph;
mod rng;

pub use graph::{BinaryOp, Graph, ReduceOp, UnaryOp, Var};
pub use rng::{Noise, Rng, ZeroNoise};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(
                "tensor",
                format!("dimensions must be positive, got {shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a tensor whose shape is already known to match `data`.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), vec![value; numel])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_parts(vec![1], vec![value])
    }

    /// A `[1 × n]` matrix.
    pub fn row(values: &[f64]) -> Self {
        Tensor::from_parts(vec![1, values.len()], values.to_vec())
    }

    /// A 1-D tensor of length `n`.
    pub fn vector(values: &[f64]) -> Self {
        Tensor::from_parts(vec![values.len()], values.to_vec())
    }

    /// Stacks equal-length rows into a `[rows × cols]` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("from_rows", &[cols], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(&[rows.len(), cols], data)
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

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Number of rows of a matrix, or 1 for a vector.
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let cols = *self.shape.last().expect("tensor has rank >= 1");
        &self.data[r * cols..(r + 1) * cols]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
