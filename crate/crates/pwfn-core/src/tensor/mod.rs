//! Dense tensors with reverse-mode automatic differentiation.
//!
//! The engine is define-by-run: every forward pass records its operations on
//! a fresh [`Tape`], and [`Tape::backward`] replays them in reverse to
//! accumulate gradients. Tensors are row-major `Vec<T>` buffers plus a shape;
//! `T` is `f32` for training and `f64` for gradient-check tests.

mod adam;
mod blockdct;
mod conv;
mod linalg;
mod ops;
mod param;
mod resample;
mod tape;

pub use adam::Adam;
pub use blockdct::{dct_basis, transform_block, BLOCK};
pub use param::{Init, Param, ParamId, ParamStore};
pub use resample::bilinear_resize_tensor as resample_bilinear;
pub use tape::{GradSink, Tape, Var};

use num_traits::Float;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

/// Element type of tensors: `f32` or `f64`.
pub trait Scalar:
    Float + AddAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements but data has {got}")]
    ShapeData {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("shape {0:?} contains a zero dimension")]
    ZeroDim(Vec<usize>),
    #[error("{op}: axis {axis} differs: {left} vs {right}")]
    DimMismatch {
        op: &'static str,
        axis: usize,
        left: usize,
        right: usize,
    },
    #[error("{op}: expected shape {expected}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("{op}: invalid argument: {msg}")]
    InvalidArg { op: &'static str, msg: String },
    #[error("{op}: output dimension would be zero")]
    EmptyOutput { op: &'static str },
    #[error("variable belongs to a different (stale) tape")]
    ForeignVar,
    #[error("backward has already consumed this tape")]
    TapeConsumed,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient for parameter '{0}'")]
    NonFiniteGrad(String),
    #[error("unknown parameter id")]
    UnknownParam,
}

/// A plain row-major tensor value (no tape attached).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self, TensorError> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDim(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeData {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Flat index into a rank-4 tensor.
    pub fn at4(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        let (_, ch, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((b * ch + c) * h + y) * w + x]
    }

    pub fn reshaped(mut self, shape: impl Into<Vec<usize>>) -> Result<Self, TensorError> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ShapeData {
                shape,
                expected,
                got: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_shape_against_data() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]),
            Err(TensorError::ShapeData { .. })
        ));
        assert!(matches!(
            Tensor::<f64>::new(vec![2, 0], vec![]),
            Err(TensorError::ZeroDim(_))
        ));
    }

    #[test]
    fn cast_roundtrip() {
        let t = Tensor::<f64>::from_fn(vec![2, 2], |i| i as f64 * 0.5);
        let f: Tensor<f32> = t.cast();
        assert_eq!(f.data(), &[0.0f32, 0.5, 1.0, 1.5]);
    }
}
