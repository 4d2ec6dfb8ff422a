//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The [`Tape`] records every operation applied to values it owns and replays
//! them in reverse to accumulate gradients. Tensors are immutable once
//! created; training code records a fresh tape per step.

mod gradcheck;
mod optim;
mod params;
mod tape;

pub use gradcheck::{compare_gradients, gradcheck, GradCheckReport, DEFAULT_STEP};
pub use optim::{Optimizer, OptimizerKind};
pub use params::ParamSet;
pub use tape::{NodeId, ReduceKind, Tape};

use crate::error::{Error, Result};

/// Dense n-dimensional value in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    /// Builds a tensor, checking that `shape` and `values` agree.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() || shape.contains(&0) {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape,
                reason: format!("expected {} values, got {}", numel, values.len()),
            });
        }
        Ok(Tensor {
            shape,
            values,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; numel],
            requires_grad: false,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            values: vec![v],
            requires_grad: false,
        }
    }

    /// Row-major matrix constructor.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
            requires_grad: false,
        }
    }

    /// Marks the tensor as a differentiation target when placed on a tape.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// 2-d accessor; panics if the tensor is not a matrix.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        assert_eq!(self.shape.len(), 2, "at() needs a rank-2 tensor");
        self.values[row * self.shape[1] + col]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}
