//! Fully connected layer.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Learnable parameters of a dense layer: `weights` is `[out_units,
/// in_units]`, `bias` is `[out_units]`. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseParams<T> {
    pub fn zeros(out_units: usize, in_units: usize) -> Self {
        DenseParams {
            weights: Tensor::zeros(&[out_units, in_units]),
            bias: Tensor::zeros(&[out_units]),
        }
    }

    pub fn out_units(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_units(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let ws = self.weights.shape();
        if ws.len() != 2 {
            return Err(Error::invalid(format!(
                "dense weights must be [out, in], got {ws:?}"
            )));
        }
        if self.bias.shape() != [ws[0]] {
            return Err(Error::invalid(format!(
                "dense bias shape {:?} does not match {} output units",
                self.bias.shape(),
                ws[0]
            )));
        }
        Ok(())
    }
}

fn check_dense_input<T: Scalar>(input: &Tensor<T>, params: &DenseParams<T>) -> Result<()> {
    params.validate()?;
    if input.shape() != [params.in_units()] {
        return Err(Error::invalid(format!(
            "dense input shape {:?} does not match expected [{}]",
            input.shape(),
            params.in_units()
        )));
    }
    Ok(())
}

/// `output = weights . input + bias`.
pub fn dense_forward<T: Scalar>(input: &Tensor<T>, params: &DenseParams<T>) -> Result<Tensor<T>> {
    check_dense_input(input, params)?;
    let (out_n, in_n) = (params.out_units(), params.in_units());
    let w = params.weights.data();
    let x = input.data();
    let mut output = Tensor::zeros(&[out_n]);
    let out = output.data_mut();
    for o in 0..out_n {
        let row = &w[o * in_n..(o + 1) * in_n];
        let mut acc = params.bias.data()[o];
        for (&wv, &xv) in row.iter().zip(x) {
            acc = acc + wv * xv;
        }
        out[o] = acc;
    }
    Ok(output)
}

/// Standard linear-layer gradients: `d_input = weights^T . upstream`,
/// `d_weights = outer(upstream, input)`, `d_bias = upstream`.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &DenseParams<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, DenseParams<T>)> {
    check_dense_input(input, params)?;
    let (out_n, in_n) = (params.out_units(), params.in_units());
    if upstream.shape() != [out_n] {
        return Err(Error::invalid(format!(
            "dense upstream shape {:?} does not match expected [{out_n}]",
            upstream.shape()
        )));
    }
    let w = params.weights.data();
    let x = input.data();
    let up = upstream.data();

    let mut d_params = DenseParams::zeros(out_n, in_n);
    let d_w = d_params.weights.data_mut();
    d_params.bias.data_mut().copy_from_slice(up);

    let mut d_input = Tensor::zeros(&[in_n]);
    let d_x = d_input.data_mut();
    for o in 0..out_n {
        let u = up[o];
        let row = &w[o * in_n..(o + 1) * in_n];
        let d_row = &mut d_w[o * in_n..(o + 1) * in_n];
        for i in 0..in_n {
            d_row[i] = u * x[i];
            d_x[i] = d_x[i] + u * row[i];
        }
    }
    Ok((d_input, d_params))
}
