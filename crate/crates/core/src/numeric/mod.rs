//! Dense tensors, reverse-mode autodiff, and the optimizer.
//!
//! Everything runs on `f64`. The [`Tape`] records operations eagerly and
//! [`Tape::backward`] walks them in reverse, so gradients are available for
//! any recorded scalar loss. Sparse resampling matrices live in [`sparse`],
//! the transformer encoder block in [`attention`], and parameter state plus
//! Adam in [`adam`].

pub mod adam;
pub mod attention;
pub mod checkpoint;
pub mod gradcheck;
pub mod sparse;
pub mod tape;

pub use adam::{adam_step, lr_schedule, AdamConfig, Parameter};
pub use attention::{encoder_block, xavier_uniform, AttentionParams, AttentionVars, LN_EPS};
pub use sparse::{SharedSparse, SparseMatrix};
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a {expected}-d tensor, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} holds {expected} values, got {actual}")]
    BadValueCount {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("channel count {channels} is not divisible by {heads} heads")]
    HeadSplit { channels: usize, heads: usize },
    #[error("normalized axis is empty")]
    EmptyAxis,
    #[error("parameter {0} has no gradient; run backward before stepping")]
    MissingGradient(String),
    #[error("sparse entry ({row}, {col}) outside a {rows}x{cols} matrix")]
    SparseOutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("gather index {index} outside {rows} rows")]
    GatherOutOfBounds { index: i64, rows: usize },
    #[error("convolution kernel {kernel}x{kernel} does not fit a {size}x{size} input with padding {pad}")]
    KernelTooLarge {
        kernel: usize,
        size: usize,
        pad: usize,
    },
    #[error("checkpoint {path}: {reason}")]
    BadCheckpoint { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense row-major tensor of `f64`. Rank is the length of `shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], values: Vec<f64>) -> Result<Self, NumericError> {
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(NumericError::BadValueCount {
                shape: shape.to_vec(),
                expected,
                actual: values.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            values,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Rows of a 2-d tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() needs a 2-d tensor");
        self.shape[0]
    }

    /// Columns of a 2-d tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() needs a 2-d tensor");
        self.shape[1]
    }

    /// Element of a 2-d tensor.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        assert_eq!(self.shape.len(), 2, "at() needs a 2-d tensor");
        self.values[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        assert_eq!(self.shape.len(), 2, "set() needs a 2-d tensor");
        let cols = self.shape[1];
        self.values[r * cols + c] = v;
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() needs a single-element tensor");
        self.values[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_count() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::from_vec(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, NumericError::BadValueCount { .. }));
    }

    #[test]
    fn two_d_accessors() {
        let t = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.rows(), 2);
        assert_eq!(t.at(1, 0), 3.0);
    }
}
