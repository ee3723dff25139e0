//! 3x3 stride-1 same-padded convolution (cross-correlation convention).
//!
//! The forward pass lowers the input to an im2col matrix and runs a small
//! hand-rolled GEMM over contiguous rows; backward reuses the same column
//! matrix for the weight gradient and scatters the column gradient back with
//! col2im. Kernels are fixed at 3x3 and padding at 1, which keeps output
//! spatial dimensions equal to the input.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Spatial kernel size of every convolution in the crate.
pub const KERNEL_SIZE: usize = 3;

const PAD: usize = 1;
const K2: usize = KERNEL_SIZE * KERNEL_SIZE;

/// Learnable parameters of one convolutional layer.
///
/// `weights` has shape `[out_channels, in_channels, 3, 3]`, `bias` has shape
/// `[out_channels]`. The struct doubles as the container for gradients of the
/// same shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvParams<T> {
    /// Zero-initialized parameters for `in_channels -> out_channels`.
    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        ConvParams {
            weights: Tensor::zeros(&[out_channels, in_channels, KERNEL_SIZE, KERNEL_SIZE]),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let ws = self.weights.shape();
        if ws.len() != 4 || ws[2] != KERNEL_SIZE || ws[3] != KERNEL_SIZE {
            return Err(Error::invalid(format!(
                "conv weights must be [out, in, {KERNEL_SIZE}, {KERNEL_SIZE}], got {ws:?}"
            )));
        }
        if self.bias.shape() != [ws[0]] {
            return Err(Error::invalid(format!(
                "conv bias shape {:?} does not match {} output channels",
                self.bias.shape(),
                ws[0]
            )));
        }
        Ok(())
    }
}

fn check_conv_input<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<(usize, usize, usize)> {
    params.validate()?;
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::invalid(format!(
            "conv input must be [channels, height, width], got {shape:?}"
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if c != params.in_channels() {
        return Err(Error::invalid(format!(
            "conv input has {c} channels but weights expect {}",
            params.in_channels()
        )));
    }
    Ok((c, h, w))
}

/// Lower `[C,H,W]` input into the column matrix `[C*9, H*W]` for a 3x3
/// same-padded convolution. Row `c*9 + ky*3 + kx` holds the input plane `c`
/// shifted by `(ky-1, kx-1)` with zero fill outside the image.
fn im2col<T: Scalar>(input: &Tensor<T>, c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); c * K2 * hw];
    let data = input.data();
    for ci in 0..c {
        let plane = &data[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL_SIZE {
            for kx in 0..KERNEL_SIZE {
                let row = &mut cols[(ci * K2 + ky * KERNEL_SIZE + kx) * hw..][..hw];
                let dy = ky as isize - PAD as isize;
                let dx = kx as isize - PAD as isize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    // Valid destination x range for this kernel offset.
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx.max(0)) as usize;
                    if x_lo >= x_hi {
                        continue;
                    }
                    let src_lo = (x_lo as isize + dx) as usize;
                    let dst = &mut row[y * w + x_lo..y * w + x_hi];
                    let src = &plane[sy * w + src_lo..sy * w + src_lo + (x_hi - x_lo)];
                    dst.copy_from_slice(src);
                }
            }
        }
    }
    cols
}

/// Scatter the column-matrix gradient back onto the input layout.
fn col2im<T: Scalar>(d_cols: &[T], c: usize, h: usize, w: usize) -> Tensor<T> {
    let hw = h * w;
    let mut d_input = Tensor::zeros(&[c, h, w]);
    let out = d_input.data_mut();
    for ci in 0..c {
        for ky in 0..KERNEL_SIZE {
            for kx in 0..KERNEL_SIZE {
                let row = &d_cols[(ci * K2 + ky * KERNEL_SIZE + kx) * hw..][..hw];
                let dy = ky as isize - PAD as isize;
                let dx = kx as isize - PAD as isize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx.max(0)) as usize;
                    if x_lo >= x_hi {
                        continue;
                    }
                    let src_lo = (x_lo as isize + dx) as usize;
                    let dst = &mut out[ci * hw + sy * w + src_lo..][..x_hi - x_lo];
                    let src = &row[y * w + x_lo..y * w + x_hi];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
    d_input
}

/// Same-padded stride-1 cross-correlation plus bias.
///
/// Output shape equals `[out_channels, H, W]` for an `[in_channels, H, W]`
/// input.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let (c, h, w) = check_conv_input(input, params)?;
    let hw = h * w;
    let out_c = params.out_channels();
    let k = c * K2;
    let cols = im2col(input, c, h, w);
    let weights = params.weights.data();
    let bias = params.bias.data();

    let mut output = Tensor::zeros(&[out_c, h, w]);
    let out = output.data_mut();
    for oc in 0..out_c {
        let out_row = &mut out[oc * hw..(oc + 1) * hw];
        out_row.fill(bias[oc]);
        let w_row = &weights[oc * k..(oc + 1) * k];
        for (kk, &wv) in w_row.iter().enumerate() {
            if wv == T::zero() {
                continue;
            }
            let col_row = &cols[kk * hw..(kk + 1) * hw];
            for (o, &cv) in out_row.iter_mut().zip(col_row) {
                *o = *o + wv * cv;
            }
        }
    }
    Ok(output)
}

/// Gradients of `sum(upstream * conv2d_forward(input, params))`.
///
/// Returns `(d_input, d_params)` where `d_params` shares the shapes of
/// `params`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, ConvParams<T>)> {
    let (c, h, w) = check_conv_input(input, params)?;
    let out_c = params.out_channels();
    if upstream.shape() != [out_c, h, w] {
        return Err(Error::invalid(format!(
            "conv upstream shape {:?} does not match output shape [{out_c}, {h}, {w}]",
            upstream.shape()
        )));
    }
    let hw = h * w;
    let k = c * K2;
    let cols = im2col(input, c, h, w);
    let weights = params.weights.data();
    let up = upstream.data();

    let mut d_params = ConvParams::zeros(out_c, c);
    let d_w = d_params.weights.data_mut();
    let d_b = d_params.bias.data_mut();
    let mut d_cols = vec![T::zero(); k * hw];

    for oc in 0..out_c {
        let up_row = &up[oc * hw..(oc + 1) * hw];
        d_b[oc] = up_row.iter().fold(T::zero(), |acc, &v| acc + v);
        let w_row = &weights[oc * k..(oc + 1) * k];
        let d_w_row = &mut d_w[oc * k..(oc + 1) * k];
        for kk in 0..k {
            let col_row = &cols[kk * hw..(kk + 1) * hw];
            // d_weights[oc, kk] = <upstream plane, column row>
            let mut acc = T::zero();
            for (&u, &cv) in up_row.iter().zip(col_row) {
                acc = acc + u * cv;
            }
            d_w_row[kk] = acc;
            // d_cols[kk] += weights[oc, kk] * upstream plane
            let wv = w_row[kk];
            if wv == T::zero() {
                continue;
            }
            let d_col_row = &mut d_cols[kk * hw..(kk + 1) * hw];
            for (d, &u) in d_col_row.iter_mut().zip(up_row) {
                *d = *d + wv * u;
            }
        }
    }
    let d_input = col2im(&d_cols, c, h, w);
    Ok((d_input, d_params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force direct convolution: six nested loops, zero padding,
    /// written independently of the im2col path.
    pub(crate) fn conv2d_reference<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Tensor<T> {
        let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let c_out = params.out_channels();
        let mut out = Tensor::zeros(&[c_out, h, w]);
        for oc in 0..c_out {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = params.bias.at(&[oc]);
                    for ic in 0..c_in {
                        for ky in 0..KERNEL_SIZE {
                            for kx in 0..KERNEL_SIZE {
                                let sy = y as isize + ky as isize - 1;
                                let sx = x as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc = acc
                                    + params.weights.at(&[oc, ic, ky, kx])
                                        * input.at(&[ic, sy as usize, sx as usize]);
                            }
                        }
                    }
                    out.set(&[oc, y, x], acc);
                }
            }
        }
        out
    }

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    fn random_conv(rng: &mut ChaCha8Rng, out_c: usize, in_c: usize) -> ConvParams<f64> {
        let mut p = ConvParams::zeros(out_c, in_c);
        for v in p.weights.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in p.bias.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        p
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let input = Tensor::<f32>::from_vec(&[1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let mut params = ConvParams::zeros(1, 1);
        params.weights.set(&[0, 0, 1, 1], 1.0); // centered identity
        let out = conv2d_forward(&input, &params).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn zero_weights_output_constant_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_tensor(&mut rng, &[2, 4, 5]);
        let mut params = ConvParams::<f64>::zeros(3, 2);
        params.bias.data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let out = conv2d_forward(&input, &params).unwrap();
        for oc in 0..3 {
            for y in 0..4 {
                for x in 0..5 {
                    assert_eq!(out.at(&[oc, y, x]), params.bias.at(&[oc]));
                }
            }
        }
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = random_tensor(&mut rng, &[2, 5, 5]);
        let params = random_conv(&mut rng, 3, 2);
        let fast = conv2d_forward(&input, &params).unwrap();
        let slow = conv2d_reference(&input, &params);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!(rel_err(*a, *b) < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn channel_mismatch_reports_dims() {
        let input = Tensor::<f32>::zeros(&[2, 4, 4]);
        let params = ConvParams::zeros(1, 3);
        let err = conv2d_forward(&input, &params).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('3'), "{msg}");
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random_tensor(&mut rng, &[2, 4, 4]);
        let params = random_conv(&mut rng, 2, 2);
        let upstream = Tensor::zeros(&[2, 4, 4]);
        let (d_in, d_p) = conv2d_backward(&input, &params, &upstream).unwrap();
        assert!(d_in.data().iter().all(|&v| v == 0.0));
        assert!(d_p.weights.data().iter().all(|&v| v == 0.0));
        assert!(d_p.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_gradient_is_plane_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = random_tensor(&mut rng, &[1, 3, 3]);
        let params = random_conv(&mut rng, 2, 1);
        let upstream = random_tensor(&mut rng, &[2, 3, 3]);
        let (_, d_p) = conv2d_backward(&input, &params, &upstream).unwrap();
        for oc in 0..2 {
            let plane_sum: f64 = upstream.data()[oc * 9..(oc + 1) * 9].iter().sum();
            assert!((d_p.bias.at(&[oc]) - plane_sum).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_upstream_shape_checked() {
        let input = Tensor::<f32>::zeros(&[1, 4, 4]);
        let params = ConvParams::zeros(2, 1);
        let upstream = Tensor::zeros(&[2, 3, 4]);
        assert!(conv2d_backward(&input, &params, &upstream).is_err());
    }

    /// Central finite differences on sum(upstream * forward), 64-bit,
    /// step 1e-3, relative error < 1e-4.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = random_tensor(&mut rng, &[2, 4, 4]);
        let params = random_conv(&mut rng, 2, 2);
        let upstream = random_tensor(&mut rng, &[2, 4, 4]);
        let (d_in, d_p) = conv2d_backward(&input, &params, &upstream).unwrap();

        let loss = |input: &Tensor<f64>, params: &ConvParams<f64>| -> f64 {
            let out = conv2d_forward(input, params).unwrap();
            out.data()
                .iter()
                .zip(upstream.data())
                .map(|(&o, &u)| o * u)
                .sum()
        };
        let h = 1e-3;

        for i in 0..input.len() {
            let mut plus = input.clone();
            plus.data_mut()[i] += h;
            let mut minus = input.clone();
            minus.data_mut()[i] -= h;
            let fd = (loss(&plus, &params) - loss(&minus, &params)) / (2.0 * h);
            let an = d_in.data()[i];
            assert!((an - fd).abs() <= 1e-4 * an.abs().max(fd.abs()) + 1e-8, "{an} vs {fd}");
        }
        for i in 0..params.weights.len() {
            let mut plus = params.clone();
            plus.weights.data_mut()[i] += h;
            let mut minus = params.clone();
            minus.weights.data_mut()[i] -= h;
            let fd = (loss(&input, &plus) - loss(&input, &minus)) / (2.0 * h);
            let an = d_p.weights.data()[i];
            assert!((an - fd).abs() <= 1e-4 * an.abs().max(fd.abs()) + 1e-8, "{an} vs {fd}");
        }
        for i in 0..params.bias.len() {
            let mut plus = params.clone();
            plus.bias.data_mut()[i] += h;
            let mut minus = params.clone();
            minus.bias.data_mut()[i] -= h;
            let fd = (loss(&input, &plus) - loss(&input, &minus)) / (2.0 * h);
            let an = d_p.bias.data()[i];
            assert!((an - fd).abs() <= 1e-4 * an.abs().max(fd.abs()) + 1e-8, "{an} vs {fd}");
        }
    }

    // Linearity in the input when bias is zero: f(a*x + b*y) = a*f(x) + b*f(y).
    #[test]
    fn linear_in_input_with_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor(&mut rng, &[2, 6, 6]);
        let y = random_tensor(&mut rng, &[2, 6, 6]);
        let mut params = random_conv(&mut rng, 3, 2);
        params.bias = Tensor::zeros(&[3]);
        let (a, b) = (0.7, -1.3);

        let mut combo = x.map(|v| v * a);
        let scaled_y = y.map(|v| v * b);
        combo.add_assign(&scaled_y).unwrap();

        let lhs = conv2d_forward(&combo, &params).unwrap();
        let fx = conv2d_forward(&x, &params).unwrap();
        let fy = conv2d_forward(&y, &params).unwrap();
        for ((l, &vx), &vy) in lhs.data().iter().zip(fx.data()).zip(fy.data()) {
            let rhs = a * vx + b * vy;
            assert!(rel_err(*l, rhs) < 1e-5, "{l} vs {rhs}");
        }
    }
}
