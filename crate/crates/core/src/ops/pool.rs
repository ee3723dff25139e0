//! 2x2 stride-2 max pooling with argmax bookkeeping.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Winner positions recorded by [`maxpool2_forward`], consumed by
/// [`maxpool2_backward`]. `winners[i]` is the flat index into the *input*
/// tensor of the maximum of output element `i`; ties go to the first
/// candidate in row-major window order.
#[derive(Clone, Debug)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    winners: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn winners(&self) -> &[usize] {
        &self.winners
    }
}

/// Max over non-overlapping 2x2 windows, stride 2.
///
/// Requires even spatial dimensions; returns the pooled tensor and the
/// argmax map for the backward pass.
pub fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::invalid(format!(
            "maxpool input must be [channels, height, width], got {shape:?}"
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!(
            "maxpool requires even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut output = Tensor::zeros(&[c, oh, ow]);
    let mut winners = vec![0usize; c * oh * ow];
    let data = input.data();
    let out = output.data_mut();
    for ci in 0..c {
        let plane = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let base = plane + (2 * oy) * w + 2 * ox;
                // Row-major window order; strict > keeps the first maximum.
                let mut best_idx = base;
                let mut best = data[base];
                for &cand in &[base + 1, base + w, base + w + 1] {
                    if data[cand] > best {
                        best = data[cand];
                        best_idx = cand;
                    }
                }
                let flat_out = (ci * oh + oy) * ow + ox;
                out[flat_out] = best;
                winners[flat_out] = best_idx;
            }
        }
    }
    Ok((
        output,
        PoolIndices {
            input_shape: shape.to_vec(),
            output_shape: vec![c, oh, ow],
            winners,
        },
    ))
}

/// Route each upstream value to its recorded argmax position; all other
/// positions receive zero.
pub fn maxpool2_backward<T: Scalar>(indices: &PoolIndices, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if upstream.shape() != indices.output_shape.as_slice() {
        return Err(Error::invalid(format!(
            "maxpool upstream shape {:?} does not match pooled shape {:?}",
            upstream.shape(),
            indices.output_shape
        )));
    }
    let mut d_input = Tensor::zeros(&indices.input_shape);
    let out = d_input.data_mut();
    for (&win, &u) in indices.winners.iter().zip(upstream.data()) {
        out[win] = out[win] + u;
    }
    Ok(d_input)
}
