//! Image decoding, preprocessing, and photometric adjustments.
//!
//! Pixels live in planar (channel-major) f32, normalized to [0,1]. Decoding
//! accepts 8-bit RGB PNG and JPEG only; everything else is a decode error.

use std::path::Path;

use crate::error::{Error, Result};
use crate::interp::resize_bilinear;
use crate::tensor::Tensor;

/// Preprocessing target: images are downscaled to this square size before
/// cropping.
pub const PREPROCESS_SIZE: usize = 300;

/// Planar RGB image, three channels of `height * width` values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB {
    width: usize,
    height: usize,
    /// Channel-major: `data[c*h*w + y*w + x]`.
    data: Vec<f32>,
}

impl ImageRGB {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "image dims must be nonzero");
        ImageRGB {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn from_planar(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dims must be nonzero"));
        }
        if data.len() != 3 * width * height {
            return Err(Error::invalid(format!(
                "planar buffer holds {} values, expected {} for {}x{} RGB",
                data.len(),
                3 * width * height,
                width,
                height
            )));
        }
        Ok(ImageRGB {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, y: usize, x: usize) -> f32 {
        debug_assert!(channel < 3 && y < self.height && x < self.width);
        self.data[(channel * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, y: usize, x: usize, value: f32) {
        debug_assert!(channel < 3 && y < self.height && x < self.width);
        self.data[(channel * self.height + y) * self.width + x] = value;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.width * self.height;
        &self.data[c * plane..(c + 1) * plane]
    }

    /// View as a [3, h, w] tensor (copies the buffer).
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(&[3, self.height, self.width], self.data.clone())
            .expect("image buffer is consistent by construction")
    }

    /// Mean luminance 0.299 R + 0.587 G + 0.114 B over the whole image.
    pub fn mean_luminance(&self) -> f32 {
        let plane = self.width * self.height;
        let mut acc = 0.0f64;
        for i in 0..plane {
            acc += 0.299 * self.data[i] as f64
                + 0.587 * self.data[plane + i] as f64
                + 0.114 * self.data[2 * plane + i] as f64;
        }
        (acc / plane as f64) as f32
    }
}

/// Decode an 8-bit RGB PNG or JPEG into normalized planar form.
pub fn decode_image(path: &Path) -> Result<ImageRGB> {
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = match decoded {
        image::DynamicImage::ImageRgb8(buf) => buf,
        other => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                message: format!(
                    "expected 8-bit RGB pixels, got {:?}",
                    other.color()
                ),
            })
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut img = ImageRGB::new(w, h);
    for (y, row) in rgb.rows().enumerate() {
        for (x, px) in row.enumerate() {
            for c in 0..3 {
                img.set(c, y, x, px.0[c] as f32 / 255.0);
            }
        }
    }
    Ok(img)
}

/// Bilinear resize (corner-aligned), channel by channel.
pub fn resize(img: &ImageRGB, width: usize, height: usize) -> ImageRGB {
    let mut out = ImageRGB::new(width, height);
    let plane = width * height;
    for c in 0..3 {
        let resized = resize_bilinear(img.channel(c), img.width, img.height, width, height);
        out.data[c * plane..(c + 1) * plane].copy_from_slice(&resized);
    }
    out
}

/// Decode and downscale to the standard 300x300 working size.
pub fn preprocess(path: &Path) -> Result<ImageRGB> {
    let img = decode_image(path)?;
    Ok(resize(&img, PREPROCESS_SIZE, PREPROCESS_SIZE))
}

/// Copy the `size` x `size` window whose top-left corner is (x0, y0).
pub fn crop_window(img: &ImageRGB, x0: usize, y0: usize, size: usize) -> Result<ImageRGB> {
    if x0 + size > img.width || y0 + size > img.height {
        return Err(Error::invalid(format!(
            "crop window {size}x{size}+{x0}+{y0} exceeds image {}x{}",
            img.width, img.height
        )));
    }
    let mut out = ImageRGB::new(size, size);
    for c in 0..3 {
        for y in 0..size {
            let src_base = (c * img.height + y0 + y) * img.width + x0;
            let dst_base = (c * size + y) * size;
            out.data[dst_base..dst_base + size]
                .copy_from_slice(&img.data[src_base..src_base + size]);
        }
    }
    Ok(out)
}

/// Deterministic centered crop used on the evaluation path. The input must
/// be strictly larger than `size` in both dimensions; an exact-size input is
/// rejected rather than passed through, so accidental double-cropping fails
/// loudly.
pub fn center_crop(img: &ImageRGB, size: usize) -> Result<Tensor<f32>> {
    if size == 0 {
        return Err(Error::invalid("crop size must be nonzero"));
    }
    if img.width <= size || img.height <= size {
        return Err(Error::invalid(format!(
            "center crop of {size} needs an image strictly larger, got {}x{}",
            img.width, img.height
        )));
    }
    let x0 = (img.width - size) / 2;
    let y0 = (img.height - size) / 2;
    Ok(crop_window(img, x0, y0, size)?.to_tensor())
}

/// Additive brightness: clamp(x + f) per channel.
pub fn adjust_brightness(img: &ImageRGB, f: f32) -> ImageRGB {
    let mut out = img.clone();
    for v in &mut out.data {
        *v = (*v + f).clamp(0.0, 1.0);
    }
    out
}

/// Contrast about the image's mean luminance: clamp(x + f*(x - mu)). This
/// is the (1+f)-gain form arranged so f = 0 reproduces the input bit for
/// bit.
pub fn adjust_contrast(img: &ImageRGB, f: f32) -> ImageRGB {
    let mu = img.mean_luminance();
    let mut out = img.clone();
    for v in &mut out.data {
        *v = (*v + f * (*v - mu)).clamp(0.0, 1.0);
    }
    out
}

/// Hue rotation (fraction of a full cycle, wrapped) and saturation gain
/// (clamped to [0,1]) via HSV. `h = 0, s = 1` is exact identity.
pub fn adjust_hue_saturation(img: &ImageRGB, h: f32, s: f32) -> ImageRGB {
    if h == 0.0 && s == 1.0 {
        return img.clone();
    }
    let plane = img.width * img.height;
    let mut out = img.clone();
    for i in 0..plane {
        let (r, g, b) = (
            img.data[i] as f64,
            img.data[plane + i] as f64,
            img.data[2 * plane + i] as f64,
        );
        let (hue, sat, val) = rgb_to_hsv(r, g, b);
        let hue = (hue + h as f64).rem_euclid(1.0);
        let sat = (sat * s as f64).clamp(0.0, 1.0);
        let (r, g, b) = hsv_to_rgb(hue, sat, val);
        out.data[i] = r as f32;
        out.data[plane + i] = g as f32;
        out.data[2 * plane + i] = b as f32;
    }
    out
}

/// RGB in [0,1] to (hue in turns [0,1), saturation, value).
fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / delta).rem_euclid(6.0)) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    (hue, sat, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = (h6.floor() as usize).min(5);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}
