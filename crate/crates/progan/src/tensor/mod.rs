//! Dense tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain shape-plus-values container in batch, height, width,
//! channels layout (row-major, channels fastest). Differentiable computation
//! happens on a [`Tape`]: leaves are created from tensors, operations record
//! nodes eagerly, and [`Var::backward`] produces gradients *as new tape
//! nodes*, so a second backward pass can differentiate through a first one.
//! That property is what the gradient-penalty term needs.
//!
//! Every operation validates its output for NaN/Inf and reports a
//! [`TensorError::NonFinite`] naming the operation; division by an exact zero
//! and square roots of negatives surface this way instead of propagating
//! silently.

mod gradcheck;
pub(crate) mod kernels;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{GradMap, Tape, Var};

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Element type of tensors: `f32` for training, `f64` for gradient checks.
pub trait Real:
    Copy
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + Sum
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn powf(self, e: Self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    #[inline(always)]
    fn powf(self, e: Self) -> Self {
        f32::powf(self, e)
    }
    #[inline(always)]
    fn abs(self) -> Self {
        f32::abs(self)
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline(always)]
    fn powf(self, e: Self) -> Self {
        f64::powf(self, e)
    }
    #[inline(always)]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Operand shapes are incompatible for the named operation.
    ShapeMismatch { op: &'static str, detail: String },
    /// An operation produced NaN or Inf (division by exact zero lands here).
    NonFinite { op: &'static str },
    /// Invalid argument outside shape algebra (bad slope, empty axis list, ...).
    InvalidArg { op: &'static str, detail: String },
    /// `backward` was called on a tensor with more than one element.
    NotScalar { numel: usize },
    /// `backward` target is not connected to any differentiable leaf.
    DetachedGraph,
    /// Operands live on different tapes.
    CrossTape,
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, detail } => {
                write!(f, "shape mismatch in {op}: {detail}")
            }
            TensorError::NonFinite { op } => {
                write!(f, "non-finite value produced by {op}")
            }
            TensorError::InvalidArg { op, detail } => {
                write!(f, "invalid argument to {op}: {detail}")
            }
            TensorError::NotScalar { numel } => {
                write!(f, "backward requires a scalar, got {numel} elements")
            }
            TensorError::DetachedGraph => {
                write!(f, "backward target is not connected to any differentiable leaf")
            }
            TensorError::CrossTape => write!(f, "operands belong to different tapes"),
        }
    }
}

impl std::error::Error for TensorError {}

/// Dense N-dimensional value in row-major layout.
///
/// Image tensors use `[batch, height, width, channels]`; biases are rank-1
/// `[channels]`; convolution weights are rank-4 `[kh, kw, c_in, c_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Real> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) || numel != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("shape {shape:?} does not describe {} values", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![E::ZERO; numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: E) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: E) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Tensor filled by a function of the flat index.
    pub fn from_fn(shape: Vec<usize>, f: impl FnMut(usize) -> E) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: (0..numel).map(f).collect(),
        }
    }

    /// Standard-normal tensor drawn from `rng`.
    pub fn randn(shape: Vec<usize>, rng: &mut crate::rng::Rng) -> Self {
        Self::from_fn(shape, |_| E::from_f64(rng.normal_f64()))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Flat offset of `[b, h, w, c]` in a rank-4 tensor.
    #[inline]
    pub fn idx4(&self, b: usize, h: usize, w: usize, c: usize) -> usize {
        debug_assert_eq!(self.rank(), 4);
        ((b * self.shape[1] + h) * self.shape[2] + w) * self.shape[3] + c
    }

    #[inline]
    pub fn at4(&self, b: usize, h: usize, w: usize, c: usize) -> E {
        self.data[self.idx4(b, h, w, c)]
    }

    /// Single stored value of a one-element tensor.
    pub fn scalar_value(&self) -> Result<E, TensorError> {
        if self.numel() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::NotScalar {
                numel: self.numel(),
            })
        }
    }

    /// Converts elements to another precision (used by f64 gradient checks).
    pub fn cast<T: Real>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor<E>, TensorError> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Maximum absolute difference to another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor<E>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_shape_data_mismatch() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn idx4_is_channels_last() {
        let t = Tensor::<f32>::from_fn(vec![2, 3, 4, 5], |i| i as f32);
        assert_eq!(t.at4(0, 0, 0, 1), 1.0);
        assert_eq!(t.at4(0, 0, 1, 0), 5.0);
        assert_eq!(t.at4(0, 1, 0, 0), 20.0);
        assert_eq!(t.at4(1, 0, 0, 0), 60.0);
    }

    #[test]
    fn cast_roundtrip_f32_f64() {
        let t = Tensor::<f32>::from_fn(vec![7], |i| i as f32 * 0.5 - 1.0);
        let back: Tensor<f32> = t.cast::<f64>().cast();
        assert_eq!(t, back);
    }

    #[test]
    fn detached_tensors_cross_threads() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<Tensor<f32>>();
        assert_send_sync::<Tensor<f64>>();
        // tape handles stay on one thread by construction (Rc-based), which
        // the compiler enforces; only detached tensors move between threads
        let t = Tensor::<f32>::full(vec![4], 2.0);
        let handle = std::thread::spawn(move || t.data().iter().sum::<f32>());
        assert_eq!(handle.join().unwrap(), 8.0);
    }
}
