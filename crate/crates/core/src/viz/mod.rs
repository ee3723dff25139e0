//! Decision-support visualizations: feature-map heatmaps, upscaling, and
//! the overlay/grid renderers, plus gradient saliency and occlusion
//! sensitivity.

pub mod render;
pub mod sensitivity;

use std::path::Path;

use crate::error::{Error, Result};
use crate::interp::resize_bilinear;
use crate::network::{forward, Model};
use crate::tensor::{Scalar, Tensor};

pub use render::{
    compose_grid, render_grid, render_overlay, save_png, OverlayImage, DEFAULT_ALPHA_MAX, GREEN,
};
pub use sensitivity::{occlusion_map, saliency, OcclusionConfig};

/// Names one feature map: convolution layer (counted across blocks, 0..7 on
/// the default architecture) and filter within that layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureMapId {
    pub layer: usize,
    pub filter: usize,
}

impl FeatureMapId {
    pub fn new(layer: usize, filter: usize) -> Self {
        FeatureMapId { layer, filter }
    }

    /// Check the id against a concrete model's layer/filter counts,
    /// echoing the valid ranges on failure.
    pub fn validate<T: Scalar>(&self, model: &Model<T>) -> Result<()> {
        let layers = model.config.conv_layers();
        if layers == 0 {
            return Err(Error::invalid("model has no convolution layers"));
        }
        if self.layer >= layers {
            return Err(Error::invalid(format!(
                "layer {} out of range, valid layers are 0..={}",
                self.layer,
                layers - 1
            )));
        }
        let filters = model.config.conv_channels(self.layer).1;
        if self.filter >= filters {
            return Err(Error::invalid(format!(
                "filter {} out of range: layer {} has {} filters",
                self.filter, self.layer, filters
            )));
        }
        Ok(())
    }
}

/// What a heatmap shows; carried along so exports can label themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapKind {
    FeatureMap(FeatureMapId),
    Saliency,
    Occlusion,
}

/// A 2D scalar field. Values are raw until [`Heatmap::normalized`] maps
/// them to [0,1] and records the (min, max) it used. Feature maps and
/// saliency are non-negative by construction; occlusion maps may go
/// negative where hiding a region helps the score.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    values: Vec<f32>,
    kind: HeatmapKind,
    /// (min, max) consumed by normalization, present once normalized.
    norm: Option<(f32, f32)>,
}

impl Heatmap {
    pub fn new(kind: HeatmapKind, width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("heatmap dims must be nonzero"));
        }
        if values.len() != width * height {
            return Err(Error::invalid(format!(
                "heatmap buffer holds {} values, expected {}",
                values.len(),
                width * height
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite heatmap value {bad}")));
        }
        Ok(Heatmap {
            width,
            height,
            values,
            kind,
            norm: None,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn kind(&self) -> HeatmapKind {
        self.kind
    }

    /// (min, max) used by normalization, if this map has been normalized.
    pub fn norm_record(&self) -> Option<(f32, f32)> {
        self.norm
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        debug_assert!(y < self.height && x < self.width);
        self.values[y * self.width + x]
    }

    /// Min-max normalize to [0,1]. A constant map has no contrast to show
    /// and maps to all zeros (fully transparent when rendered).
    pub fn normalized(&self) -> Heatmap {
        let min = self.values.iter().copied().fold(f32::INFINITY, f32::min);
        let max = self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let values = if min == max {
            vec![0.0; self.values.len()]
        } else {
            let span = max - min;
            self.values.iter().map(|v| (v - min) / span).collect()
        };
        Heatmap {
            width: self.width,
            height: self.height,
            values,
            kind: self.kind,
            norm: Some((min, max)),
        }
    }

    /// Corner-aligned bilinear resize. Interpolation is convex, so values
    /// never leave the source's [min, max].
    pub fn upscaled(&self, width: usize, height: usize) -> Result<Heatmap> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("target dims must be nonzero"));
        }
        let values = resize_bilinear(&self.values, self.width, self.height, width, height);
        Ok(Heatmap {
            width,
            height,
            values,
            kind: self.kind,
            norm: self.norm,
        })
    }

    /// Plain-text export: one row per line, space-separated raw values.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for y in 0..self.height {
            let row: Vec<String> = (0..self.width)
                .map(|x| self.get(y, x).to_string())
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Run the model and pull one post-ReLU activation plane.
pub fn extract_feature_map<T: Scalar>(
    model: &Model<T>,
    input: &Tensor<T>,
    id: FeatureMapId,
) -> Result<Heatmap> {
    id.validate(model)?;
    let trace = forward(model, input, &[id.layer])?;
    let plane = &trace.captured[&id.layer];
    let shape = plane.shape();
    let (h, w) = (shape[1], shape[2]);
    let mut values = Vec::with_capacity(h * w);
    let data = plane.data();
    let offset = id.filter * h * w;
    for &v in &data[offset..offset + h * w] {
        values.push(v.to_f64() as f32);
    }
    Heatmap::new(HeatmapKind::FeatureMap(id), w, h, values)
}
