//! Bilinear resampling of 2D planes with corner alignment.
//!
//! Shared by image preprocessing (RGB resize) and heatmap upscaling. With
//! corner alignment the four source corners map exactly onto the target
//! corners, and a same-size resize is the identity.

use crate::tensor::Scalar;

/// Resize a row-major `src_w x src_h` plane to `dst_w x dst_h`.
///
/// Output values are convex combinations of source values, so the result
/// never overshoots the source min/max, and constant planes stay constant.
pub fn resize_bilinear<T: Scalar>(
    src: &[T],
    src_w: usize,
    src_h: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<T> {
    assert_eq!(src.len(), src_w * src_h, "source length mismatch");
    assert!(src_w >= 1 && src_h >= 1 && dst_w >= 1 && dst_h >= 1);

    let scale = |src_n: usize, dst_n: usize| -> f64 {
        if dst_n <= 1 {
            0.0
        } else {
            (src_n - 1) as f64 / (dst_n - 1) as f64
        }
    };
    let sx = scale(src_w, dst_w);
    let sy = scale(src_h, dst_h);

    let mut dst = Vec::with_capacity(dst_w * dst_h);
    for y in 0..dst_h {
        let fy = y as f64 * sy;
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src_h - 1);
        let wy = fy - y0 as f64;
        for x in 0..dst_w {
            let fx = x as f64 * sx;
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src_w - 1);
            let wx = fx - x0 as f64;

            let v00 = src[y0 * src_w + x0].to_f64();
            let v01 = src[y0 * src_w + x1].to_f64();
            let v10 = src[y1 * src_w + x0].to_f64();
            let v11 = src[y1 * src_w + x1].to_f64();
            let top = v00 + (v01 - v00) * wx;
            let bot = v10 + (v11 - v10) * wx;
            dst.push(T::from_f64(top + (bot - top) * wy));
        }
    }
    dst
}
