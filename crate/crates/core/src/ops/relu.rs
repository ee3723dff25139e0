//! Rectified linear unit.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Activation mask recorded by [`relu_forward`]: `true` where the input was
/// strictly positive. The gradient at exactly zero is defined as zero.
#[derive(Clone, Debug)]
pub struct ReluMask {
    shape: Vec<usize>,
    active: Vec<bool>,
}

impl ReluMask {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }
}

/// Elementwise `max(x, 0)` plus the mask for the backward pass.
pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, ReluMask) {
    let active: Vec<bool> = input.data().iter().map(|&v| v > T::zero()).collect();
    let output = input.map(|v| if v > T::zero() { v } else { T::zero() });
    (
        output,
        ReluMask {
            shape: input.shape().to_vec(),
            active,
        },
    )
}

/// `upstream` gated by the recorded mask.
pub fn relu_backward<T: Scalar>(mask: &ReluMask, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if upstream.shape() != mask.shape.as_slice() {
        return Err(Error::invalid(format!(
            "relu upstream shape {:?} does not match forward shape {:?}",
            upstream.shape(),
            mask.shape
        )));
    }
    let data = upstream
        .data()
        .iter()
        .zip(&mask.active)
        .map(|(&u, &a)| if a { u } else { T::zero() })
        .collect();
    Tensor::from_vec(&mask.shape, data)
}
