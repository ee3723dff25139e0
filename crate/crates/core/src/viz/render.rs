//! Overlay and grid rendering, plus PNG output.

use std::path::Path;

use crate::data::image::ImageRGB;
use crate::error::{Error, Result};
use crate::network::Model;
use crate::tensor::Tensor;
use crate::viz::{extract_feature_map, FeatureMapId, Heatmap};

/// Blend target: dark green, chosen so high activations read as darker
/// green on bright skin imagery.
pub const GREEN: [f32; 3] = [0.0, 100.0 / 255.0, 0.0];

/// Default overlay opacity ceiling.
pub const DEFAULT_ALPHA_MAX: f32 = 0.7;

/// Rendered overlay; pixel values stay in [0,1] until PNG quantization.
pub type OverlayImage = ImageRGB;

fn tensor_to_image(input: &Tensor<f32>) -> Result<ImageRGB> {
    let shape = input.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::invalid(format!(
            "expected a [3, h, w] image tensor, got {shape:?}"
        )));
    }
    ImageRGB::from_planar(shape[2], shape[1], input.data().to_vec())
}

/// Alpha-blend a normalized heatmap over an image as transparent green:
/// per pixel, `alpha = alpha_max * v` and
/// `out = (1 - alpha) * pixel + alpha * GREEN`. The map is min-max
/// normalized first (constant maps become fully transparent), so zero
/// activation reproduces the input pixel bit for bit.
pub fn render_overlay(
    image: &Tensor<f32>,
    map: &Heatmap,
    alpha_max: f32,
) -> Result<OverlayImage> {
    if !(0.0..=1.0).contains(&alpha_max) {
        return Err(Error::invalid(format!(
            "alpha_max must lie in [0, 1], got {alpha_max}"
        )));
    }
    let mut out = tensor_to_image(image)?;
    if map.width() != out.width() || map.height() != out.height() {
        return Err(Error::invalid(format!(
            "heatmap {}x{} does not match image {}x{}",
            map.width(),
            map.height(),
            out.width(),
            out.height()
        )));
    }
    let norm = map.normalized();
    for y in 0..out.height() {
        for x in 0..out.width() {
            let alpha = alpha_max as f64 * norm.get(y, x) as f64;
            for c in 0..3 {
                let p = out.get(c, y, x) as f64;
                let blended = (1.0 - alpha) * p + alpha * GREEN[c] as f64;
                out.set(c, y, x, blended as f32);
            }
        }
    }
    Ok(out)
}

/// Lay out one row per image and one column per id, with the raw image in
/// the first column and 2-pixel white gutters between cells. Cell size is
/// the model's input resolution.
pub fn compose_grid(
    model: &Model<f32>,
    images: &[Tensor<f32>],
    ids: &[FeatureMapId],
    alpha_max: f32,
) -> Result<ImageRGB> {
    if images.is_empty() || ids.is_empty() {
        return Err(Error::invalid("grid needs at least one image and one id"));
    }
    for id in ids {
        id.validate(model)?;
    }
    const GUTTER: usize = 2;
    let cell = model.config.input_shape[1];
    let rows = images.len();
    let cols = 1 + ids.len();
    let width = cols * cell + (cols - 1) * GUTTER;
    let height = rows * cell + (rows - 1) * GUTTER;
    let mut grid = ImageRGB::new(width, height);
    // White gutters: start from an all-white canvas.
    for v in grid.data_mut() {
        *v = 1.0;
    }

    let mut blit = |img: &ImageRGB, row: usize, col: usize| {
        let y0 = row * (cell + GUTTER);
        let x0 = col * (cell + GUTTER);
        for c in 0..3 {
            for y in 0..cell {
                for x in 0..cell {
                    grid.set(c, y0 + y, x0 + x, img.get(c, y, x));
                }
            }
        }
    };

    for (row, image) in images.iter().enumerate() {
        let raw = tensor_to_image(image)?;
        if raw.width() != cell || raw.height() != cell {
            return Err(Error::invalid(format!(
                "grid image {row} is {}x{}, expected {cell}x{cell}",
                raw.width(),
                raw.height()
            )));
        }
        blit(&raw, row, 0);
        for (i, &id) in ids.iter().enumerate() {
            let map = extract_feature_map(model, image, id)?.upscaled(cell, cell)?;
            let overlay = render_overlay(image, &map, alpha_max)?;
            blit(&overlay, row, i + 1);
        }
    }
    Ok(grid)
}

/// [`compose_grid`] straight to a PNG file.
pub fn render_grid(
    model: &Model<f32>,
    images: &[Tensor<f32>],
    ids: &[FeatureMapId],
    alpha_max: f32,
    path: &Path,
) -> Result<()> {
    let grid = compose_grid(model, images, ids, alpha_max)?;
    save_png(&grid, path)
}

/// Quantize [0,1] to 0..255, rounding halves away from zero.
fn quantize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Write an image as 8-bit RGB PNG.
pub fn save_png(img: &ImageRGB, path: &Path) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width() as u32, img.height() as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        let (x, y) = (x as usize, y as usize);
        *px = image::Rgb([
            quantize(img.get(0, y, x)),
            quantize(img.get(1, y, x)),
            quantize(img.get(2, y, x)),
        ]);
    }
    buf.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: format!("PNG encode failed: {e}"),
    })
}
