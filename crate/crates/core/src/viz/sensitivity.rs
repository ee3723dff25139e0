//! Gradient saliency and occlusion sensitivity maps.

use crate::error::{Error, Result};
use crate::network::{forward, input_gradient, sigmoid, Model};
use crate::tensor::{Scalar, Tensor};
use crate::viz::{Heatmap, HeatmapKind};

/// Per-pixel gradient magnitude of the logit with respect to the input:
/// `max_c |d logit / d input[c, y, x]|`.
pub fn saliency<T: Scalar>(model: &Model<T>, input: &Tensor<T>) -> Result<Heatmap> {
    let grad = input_gradient(model, input)?;
    let shape = grad.shape();
    let (channels, height, width) = (shape[0], shape[1], shape[2]);
    let mut values = vec![0.0f32; height * width];
    for c in 0..channels {
        for y in 0..height {
            for x in 0..width {
                let g = grad.at(&[c, y, x]).to_f64().abs() as f32;
                let v = &mut values[y * width + x];
                if g > *v {
                    *v = g;
                }
            }
        }
    }
    Heatmap::new(HeatmapKind::Saliency, width, height, values)
}

/// Occlusion sweep geometry: a `patch_size` square filled with `fill` slides
/// over the input in steps of `stride`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionConfig {
    pub patch_size: usize,
    pub stride: usize,
    pub fill: f32,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig {
            patch_size: 32,
            stride: 8,
            fill: 0.5,
        }
    }
}

impl OcclusionConfig {
    pub fn validate(&self, input_height: usize, input_width: usize) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::invalid("occlusion patch size must be nonzero"));
        }
        if self.stride == 0 {
            return Err(Error::invalid("occlusion stride must be nonzero"));
        }
        if self.patch_size > input_width || self.patch_size > input_height {
            return Err(Error::invalid(format!(
                "occlusion patch {0}x{0} does not fit a {input_width}x{input_height} input",
                self.patch_size
            )));
        }
        if !self.fill.is_finite() {
            return Err(Error::invalid("occlusion fill value must be finite"));
        }
        Ok(())
    }
}

/// Slide a filled patch over the input and record, per position, how much
/// the predicted malignancy probability drops: `sigmoid(baseline logit) -
/// sigmoid(occluded logit)`. Values are positive where hiding the region
/// hurts the prediction and negative where it helps.
pub fn occlusion_map<T: Scalar>(
    model: &Model<T>,
    input: &Tensor<T>,
    config: &OcclusionConfig,
) -> Result<Heatmap> {
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::invalid(format!(
            "expected a [c, h, w] input, got {shape:?}"
        )));
    }
    let (channels, height, width) = (shape[0], shape[1], shape[2]);
    config.validate(height, width)?;

    let baseline = sigmoid(forward(model, input, &[])?.logit.to_f64());
    let cols = (width - config.patch_size) / config.stride + 1;
    let rows = (height - config.patch_size) / config.stride + 1;
    let fill = T::from_f64(config.fill as f64);

    let mut values = Vec::with_capacity(rows * cols);
    let mut occluded = input.clone();
    for row in 0..rows {
        let y0 = row * config.stride;
        for col in 0..cols {
            let x0 = col * config.stride;
            occluded.data_mut().copy_from_slice(input.data());
            for c in 0..channels {
                for y in y0..y0 + config.patch_size {
                    for x in x0..x0 + config.patch_size {
                        occluded.set(&[c, y, x], fill);
                    }
                }
            }
            let score = sigmoid(forward(model, &occluded, &[])?.logit.to_f64());
            values.push((baseline - score) as f32);
        }
    }
    Heatmap::new(HeatmapKind::Occlusion, cols, rows, values)
}
