//! Dense f64 arrays with tape-based reverse-mode differentiation.
//!
//! The engine supports exactly the layers the branched networks need:
//! affine (fully-connected), 2-D convolution, max-pooling, ReLU, sigmoid,
//! and MSE loss, plus Adam/SGD updates with a step-decay learning rate
//! driven by the trainer. Everything is 64-bit and single-threaded per
//! tape; independent model replicas may train on separate threads.
//!
//! Conventions fixed here so the test oracles can match bit-for-bit:
//! convolution is cross-correlation (no kernel flip) with zero padding;
//! the ReLU subgradient at exactly 0 is 0; max-pool ties route the
//! gradient to the first (row-major) element of the window.

mod ops;
mod optim;
mod params;
mod tape;

pub use optim::{Optimizer, OptimizerKind};
pub use params::{ParamEntry, ParamGroup, ParamStore};
pub use tape::{NodeId, Tape};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("backward already ran on this tape")]
    GraphConsumed,
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
}

/// A dense row-major array of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct NdArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl NdArray {
    pub fn zeros(shape: &[usize]) -> NdArray {
        let len = shape.iter().product();
        NdArray {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    /// Panics if `data.len()` does not match the product of `shape`;
    /// callers construct arrays from shapes they already validated.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> NdArray {
        let expected: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            expected,
            "shape {shape:?} expects {expected} values, got {}",
            data.len()
        );
        NdArray {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(value: f64) -> NdArray {
        NdArray {
            shape: vec![1],
            data: vec![value],
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element array. Panics otherwise.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on shape {:?}", self.shape);
        self.data[0]
    }

    pub(crate) fn add_assign(&mut self, other: &NdArray) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let a = NdArray::from_vec(&[2, 3], vec![0.0; 6]);
        assert_eq!(a.shape(), &[2, 3]);
        assert_eq!(a.len(), 6);
    }

    #[test]
    #[should_panic(expected = "expects 6 values")]
    fn from_vec_rejects_wrong_length() {
        NdArray::from_vec(&[2, 3], vec![0.0; 5]);
    }

    #[test]
    fn scalar_item() {
        assert_eq!(NdArray::scalar(4.25).item(), 4.25);
    }
}
