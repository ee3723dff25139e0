//! Dense row-major tensor storage.
//!
//! Every activation, parameter, and gradient in the crate lives in a
//! [`Tensor`]. Data is a flat row-major buffer; the element type is generic
//! so the same kernels run in `f32` for training and in `f64` for
//! gradient-check tests.

use std::fmt;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type of a [`Tensor`]: `f32` or `f64`.
pub trait Scalar: Float + fmt::Debug + fmt::Display + Send + Sync + 'static {
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

/// Dense N-dimensional array with row-major flat storage.
///
/// Invariants: the shape is non-empty, every dimension is at least 1, and
/// `data.len() == product(shape)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::invalid("tensor shape must have at least one dimension"));
    }
    let mut len = 1usize;
    for (axis, &dim) in shape.iter().enumerate() {
        if dim == 0 {
            return Err(Error::invalid(format!(
                "tensor dimension {axis} is 0; all dimensions must be >= 1"
            )));
        }
        len = len.checked_mul(dim).ok_or_else(|| {
            Error::invalid(format!("tensor shape {shape:?} overflows element count"))
        })?;
    }
    Ok(len)
}

impl<T: Scalar> Tensor<T> {
    /// Zero-filled tensor. Panics on an invalid shape (internal call sites
    /// always pass validated shapes).
    pub fn zeros(shape: &[usize]) -> Self {
        let len = check_shape(shape).expect("invalid tensor shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    /// Tensor filled with a constant.
    pub fn filled(shape: &[usize], value: T) -> Self {
        let len = check_shape(shape).expect("invalid tensor shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// Build from existing flat row-major data.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if data.len() != len {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: dimensions >= 1
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

    /// Row-major flat index of a multi-index.
    pub fn flat_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0usize;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < dim, "index {ix} out of bounds for axis {i} (dim {dim})");
            flat = flat * dim + ix;
        }
        flat
    }

    /// Inverse of [`flat_index`](Self::flat_index).
    pub fn unflatten_index(&self, mut flat: usize) -> Vec<usize> {
        debug_assert!(flat < self.data.len());
        let mut index = vec![0usize; self.shape.len()];
        for (i, &dim) in self.shape.iter().enumerate().rev() {
            index[i] = flat % dim;
            flat /= dim;
        }
        index
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.flat_index(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let flat = self.flat_index(index);
        self.data[flat] = value;
    }

    /// Reinterpret the flat buffer under a new shape of equal length.
    pub fn reshaped(self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::invalid(format!(
                "cannot reshape {:?} ({} elements) to {shape:?} ({len} elements)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise in-place add. Errors on shape mismatch.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::invalid(format!(
                "cannot add tensor of shape {:?} to tensor of shape {:?}",
                other.shape, self.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.data {
            *v = *v * factor;
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
