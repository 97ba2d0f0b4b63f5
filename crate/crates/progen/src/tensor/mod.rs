//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Everything in this crate computes in 64-bit floats on contiguous row-major
//! storage. A [`Graph`] records operations on a linear tape; [`Graph::backward`]
//! replays the tape in reverse to produce a [`Gradients`] map. Trainable
//! parameters live in a [`ParameterStore`] and are leased onto a fresh graph
//! once per training step.

mod adam;
mod graph;
mod params;

pub use adam::{Adam, LearningRates};
pub use graph::{Gradients, Graph};
pub use params::{BoundParams, ParamGroup, ParamId, Parameter, ParameterStore};

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("tensor holds a non-finite value")]
    NonFiniteInput,
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward called on a tensor that is not attached to an active tape")]
    DetachedLoss,
    #[error("cross entropy: target id {target} out of range for vocab size {vocab} at position {position}")]
    TargetOutOfRange {
        target: usize,
        vocab: usize,
        position: usize,
    },
    #[error("cross entropy: every target position is padding")]
    AllPadding,
    #[error("{op}: row {row} is fully masked")]
    FullyMaskedRow { op: &'static str, row: usize },
    #[error("parameter {name}: gradient not populated before optimizer step")]
    MissingGrad { name: String },
    #[error("parameter {name} registered twice")]
    DuplicateParam { name: String },
    #[error("parameter store does not match bound snapshot (len {bound} vs {store})")]
    BindMismatch { bound: usize, store: usize },
    #[error("checkpoint parameter {name} has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("missing parameter {name} in loaded values")]
    MissingParam { name: String },
}

/// Identifies a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Immutable n-dimensional array of f64, row-major.
///
/// Cloning is cheap: the buffer is shared. A tensor optionally carries a
/// handle to the tape node that produced it; only such tensors participate
/// in backward passes.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<NodeId>,
}

impl Tensor {
    /// Builds a tensor, validating the shape/data contract and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        if shape.contains(&0) {
            return Err(TensorError::InvalidShape {
                op: "new",
                shape,
                reason: "extents must be positive".into(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFiniteInput);
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![0.0; numel]),
            node: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: Arc::new(vec![value]),
            node: None,
        }
    }

    /// 2-d convenience constructor from a slice of rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::InvalidShape {
                    op: "from_rows",
                    shape: vec![r, row.len()],
                    reason: "ragged rows".into(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![r, c], data)
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Arc<Vec<f64>>, node: Option<NodeId>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data, node }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a scalar (or single-element) tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Number of rows when viewed as a matrix (1-d tensors are one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Extent of the last axis (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn get2(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    /// Row `r` of a matrix view.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub(crate) fn node(&self) -> Option<NodeId> {
        self.node
    }

    /// Severs the tensor from its tape: gradients no longer flow through it.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Bitwise equality of shape and data.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Largest absolute elementwise difference; infinity on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
