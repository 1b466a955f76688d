//! Dense f64 tensors and reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a shape plus a flat row-major buffer. Differentiation runs
//! through a [`Tape`](tape::Tape): ops append nodes to an arena, `backward`
//! walks the arena in reverse and accumulates gradients for every node that
//! needs them. Gradients are harvested back onto the owning `Tensor`s, where
//! [`adam::AdamState`] consumes them.

pub mod adam;
pub mod check;
pub mod lstm;
pub mod tape;

use thiserror::Error;

/// Errors raised by tensor construction, tape ops, and optimizer steps.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {actual:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        actual: Vec<usize>,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: {msg}")]
    InvalidArg { op: &'static str, msg: String },
    #[error("parameter {index} has no gradient; run backward and harvest first")]
    MissingGrad { index: usize },
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Dense row-major f64 tensor. Shapes are non-empty lists of positive dims.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor from a shape and flat data; rejects dim/len mismatch,
    /// empty shapes, zero dims, and non-finite entries.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::BadShape {
                op: "from_vec",
                expected: "non-empty shape with positive dims",
                actual: shape,
            });
        }
        if numel_of(&shape) != data.len() {
            return Err(TensorError::InvalidArg {
                op: "from_vec",
                msg: format!("shape {:?} wants {} values, got {}", shape, numel_of(&shape), data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "from_vec" });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// 2-D convenience constructor.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        Self::from_vec(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        let n = numel_of(&shape);
        Self::from_vec(shape, vec![0.0; n])
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Result<Self, TensorError> {
        let n = numel_of(&shape);
        Self::from_vec(shape, vec![value; n])
    }

    /// Shape-`[1]` scalar.
    pub fn scalar(value: f64) -> Result<Self, TensorError> {
        Self::from_vec(vec![1], vec![value])
    }

    /// Glorot-uniform `[fan_in, fan_out]` parameter with `requires_grad` set.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl rand::Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Tensor {
            shape: vec![fan_in, fan_out],
            data,
            requires_grad: true,
            grad: None,
        }
    }

    /// All-zero parameter with `requires_grad` set (bias vectors, zero-init heads).
    pub fn zero_param(shape: Vec<usize>) -> Result<Self, TensorError> {
        Ok(Self::zeros(shape)?.with_grad())
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Installs a gradient buffer; length must match the data.
    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<(), TensorError> {
        if grad.len() != self.data.len() {
            return Err(TensorError::InvalidArg {
                op: "set_grad",
                msg: format!("gradient length {} != numel {}", grad.len(), self.data.len()),
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    /// Clears the gradient buffer to zeros in place (keeps the allocation).
    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}
