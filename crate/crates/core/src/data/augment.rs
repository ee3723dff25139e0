//! Stochastic training augmentation.
//!
//! The pipeline applies, in this order: random square crop, rotation about
//! the crop center (bilinear, reflect padding), horizontal flip, vertical
//! flip, brightness, contrast, hue, saturation. Parameters are sampled
//! from an [`AugmentConfig`] and recorded in an [`AugmentParams`], so a
//! transformation is replayable and the sampling and application stages can
//! be tested separately.

use rand::Rng;

use crate::data::image::{
    adjust_brightness, adjust_contrast, adjust_hue_saturation, crop_window, ImageRGB,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ranges for each augmentation stage. Degenerate ranges (low == high) and
/// disabled flags collapse a stage to identity.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub crop_size: usize,
    /// Sample a rotation angle uniformly from [0, 2pi) when set.
    pub rotate: bool,
    /// Flip left-right with probability 1/2 when set.
    pub horizontal_flip: bool,
    /// Flip top-bottom with probability 1/2 when set.
    pub vertical_flip: bool,
    /// Additive brightness offset range.
    pub brightness_range: (f64, f64),
    /// Contrast gain offset range (gain is 1 + f).
    pub contrast_range: (f64, f64),
    /// Hue shift range, in fractions of a full cycle.
    pub hue_range: (f64, f64),
    /// Saturation gain range.
    pub saturation_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_size: 224,
            rotate: true,
            horizontal_flip: true,
            vertical_flip: true,
            brightness_range: (-0.5, 0.5),
            contrast_range: (-0.7, 0.7),
            hue_range: (-0.02, 0.02),
            saturation_range: (0.7, 1.5),
        }
    }
}

impl AugmentConfig {
    /// Every stage collapsed to identity; only the crop offset remains
    /// random.
    pub fn identity() -> Self {
        AugmentConfig {
            crop_size: 224,
            rotate: false,
            horizontal_flip: false,
            vertical_flip: false,
            brightness_range: (0.0, 0.0),
            contrast_range: (0.0, 0.0),
            hue_range: (0.0, 0.0),
            saturation_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 {
            return Err(Error::invalid("crop_size must be nonzero"));
        }
        let ranges = [
            ("brightness_range", self.brightness_range),
            ("contrast_range", self.contrast_range),
            ("hue_range", self.hue_range),
            ("saturation_range", self.saturation_range),
        ];
        for (name, (lo, hi)) in ranges {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::invalid(format!(
                    "{name} must be a finite low..high pair, got ({lo}, {hi})"
                )));
            }
        }
        if self.saturation_range.0 < 0.0 {
            return Err(Error::invalid("saturation gain cannot be negative"));
        }
        Ok(())
    }
}

/// One concrete draw from the config.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    pub crop_x: usize,
    pub crop_y: usize,
    /// Radians; 0 skips resampling entirely.
    pub angle: f64,
    pub flip_h: bool,
    pub flip_v: bool,
    pub brightness: f32,
    pub contrast: f32,
    pub hue: f32,
    pub saturation: f32,
}

impl AugmentParams {
    /// Identity transform with the crop pinned at the top-left corner.
    pub fn identity() -> Self {
        AugmentParams {
            crop_x: 0,
            crop_y: 0,
            angle: 0.0,
            flip_h: false,
            flip_v: false,
            brightness: 0.0,
            contrast: 0.0,
            hue: 0.0,
            saturation: 1.0,
        }
    }
}

/// Draw parameters for one sample. The draw order is fixed (crop x, crop y,
/// angle, flips, brightness, contrast, hue, saturation) so a given stream
/// always yields the same transform.
pub fn sample_params<R: Rng>(
    config: &AugmentConfig,
    width: usize,
    height: usize,
    rng: &mut R,
) -> Result<AugmentParams> {
    config.validate()?;
    if width < config.crop_size || height < config.crop_size {
        return Err(Error::invalid(format!(
            "image {width}x{height} is smaller than crop size {}",
            config.crop_size
        )));
    }
    let crop_x = rng.gen_range(0..=width - config.crop_size);
    let crop_y = rng.gen_range(0..=height - config.crop_size);
    let angle = if config.rotate {
        rng.gen_range(0.0..std::f64::consts::TAU)
    } else {
        0.0
    };
    let flip_h = config.horizontal_flip && rng.gen_bool(0.5);
    let flip_v = config.vertical_flip && rng.gen_bool(0.5);
    let sample = |rng: &mut R, (lo, hi): (f64, f64)| -> f64 {
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..hi)
        }
    };
    let brightness = sample(rng, config.brightness_range) as f32;
    let contrast = sample(rng, config.contrast_range) as f32;
    let hue = sample(rng, config.hue_range) as f32;
    let saturation = sample(rng, config.saturation_range) as f32;
    Ok(AugmentParams {
        crop_x,
        crop_y,
        angle,
        flip_h,
        flip_v,
        brightness,
        contrast,
        hue,
        saturation,
    })
}

/// Fold a continuous coordinate into [0, n-1] by mirroring at the borders.
fn reflect(coord: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let limit = (n - 1) as f64;
    let mut c = coord.rem_euclid(2.0 * limit);
    if c > limit {
        c = 2.0 * limit - c;
    }
    c
}

/// Rotate the image content by `angle` radians about the image center,
/// sampling bilinearly with reflect padding.
fn rotate_about_center(img: &ImageRGB, angle: f64) -> ImageRGB {
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let mut out = ImageRGB::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // Inverse mapping: where does this output pixel come from?
            let sx = reflect(cx + cos * dx + sin * dy, w);
            let sy = reflect(cy - sin * dx + cos * dy, h);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            for c in 0..3 {
                let top = img.get(c, y0, x0) as f64 * (1.0 - fx) + img.get(c, y0, x1) as f64 * fx;
                let bot = img.get(c, y1, x0) as f64 * (1.0 - fx) + img.get(c, y1, x1) as f64 * fx;
                out.set(c, y, x, (top * (1.0 - fy) + bot * fy) as f32);
            }
        }
    }
    out
}

fn flip_horizontal(img: &ImageRGB) -> ImageRGB {
    let (w, h) = (img.width(), img.height());
    let mut out = ImageRGB::new(w, h);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out.set(c, y, x, img.get(c, y, w - 1 - x));
            }
        }
    }
    out
}

fn flip_vertical(img: &ImageRGB) -> ImageRGB {
    let (w, h) = (img.width(), img.height());
    let mut out = ImageRGB::new(w, h);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out.set(c, y, x, img.get(c, h - 1 - y, x));
            }
        }
    }
    out
}

/// Apply recorded parameters to an image: crop `crop_size` at the recorded
/// offset, then the geometric and photometric stages in pipeline order.
pub fn apply(img: &ImageRGB, crop_size: usize, params: &AugmentParams) -> Result<Tensor<f32>> {
    let mut work = crop_window(img, params.crop_x, params.crop_y, crop_size)?;
    if params.angle != 0.0 {
        work = rotate_about_center(&work, params.angle);
    }
    if params.flip_h {
        work = flip_horizontal(&work);
    }
    if params.flip_v {
        work = flip_vertical(&work);
    }
    if params.brightness != 0.0 {
        work = adjust_brightness(&work, params.brightness);
    }
    if params.contrast != 0.0 {
        work = adjust_contrast(&work, params.contrast);
    }
    work = adjust_hue_saturation(&work, params.hue, params.saturation);
    Ok(work.to_tensor())
}

/// Sample parameters from `config` on `rng` and apply them.
pub fn augment<R: Rng>(
    img: &ImageRGB,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    let params = sample_params(config, img.width(), img.height(), rng)?;
    apply(img, config.crop_size, &params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sample_rng;

    fn test_image(w: usize, h: usize) -> ImageRGB {
        let mut img = ImageRGB::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set(0, y, x, ((x * 7 + y * 3) % 100) as f32 / 100.0);
                img.set(1, y, x, ((x * 13 + y * 11) % 100) as f32 / 100.0);
                img.set(2, y, x, ((x + y * y) % 100) as f32 / 100.0);
            }
        }
        img
    }

    #[test]
    fn identity_params_reproduce_the_crop_exactly() {
        let img = test_image(300, 300);
        for (x0, y0) in [(0, 0), (76, 76), (10, 40)] {
            let params = AugmentParams {
                crop_x: x0,
                crop_y: y0,
                ..AugmentParams::identity()
            };
            let out = apply(&img, 224, &params).unwrap();
            let crop = crop_window(&img, x0, y0, 224).unwrap().to_tensor();
            assert_eq!(out.data(), crop.data(), "offset ({x0},{y0})");
        }
    }

    #[test]
    fn rotation_by_pi_is_a_double_flip() {
        let img = test_image(300, 300);
        let params = AugmentParams {
            angle: std::f64::consts::PI,
            ..AugmentParams::identity()
        };
        let rotated = apply(&img, 224, &params).unwrap();
        let crop = crop_window(&img, 0, 0, 224).unwrap();
        let flipped = flip_vertical(&flip_horizontal(&crop)).to_tensor();
        for (a, b) in rotated.data().iter().zip(flipped.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn flips_commute_and_self_invert() {
        let img = test_image(20, 20);
        let twice = flip_horizontal(&flip_horizontal(&img));
        assert_eq!(twice.data(), img.data());
        let hv = flip_vertical(&flip_horizontal(&img));
        let vh = flip_horizontal(&flip_vertical(&img));
        assert_eq!(hv.data(), vh.data());
    }

    #[test]
    fn outputs_stay_in_unit_interval() {
        let img = test_image(300, 300);
        let cfg = AugmentConfig::default();
        let mut rng = sample_rng(11, 0, 0);
        for draw in 0..5 {
            let out = augment(&img, &cfg, &mut rng).unwrap();
            assert_eq!(out.shape(), [3, 224, 224]);
            for &v in out.data() {
                assert!((0.0..=1.0).contains(&v), "draw {draw}: value {v}");
            }
        }
    }

    #[test]
    fn sampled_factors_respect_ranges() {
        let cfg = AugmentConfig::default();
        let mut rng = sample_rng(5, 0, 0);
        let n = 10_000;
        let mut sum_brightness = 0.0f64;
        for _ in 0..n {
            let p = sample_params(&cfg, 300, 300, &mut rng).unwrap();
            assert!(p.crop_x <= 76 && p.crop_y <= 76);
            assert!((0.0..std::f64::consts::TAU).contains(&p.angle));
            assert!((-0.5..=0.5).contains(&(p.brightness as f64)));
            assert!((-0.7..=0.7).contains(&(p.contrast as f64)));
            assert!((-0.02..=0.02).contains(&(p.hue as f64)));
            assert!((0.7..=1.5).contains(&(p.saturation as f64)));
            sum_brightness += p.brightness as f64;
        }
        // Mean of U[-0.5, 0.5] over n draws: sigma = 1/(sqrt(12 n)).
        let mean = sum_brightness / n as f64;
        let sigma = 1.0 / (12.0f64 * n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "brightness mean {mean} vs 3 sigma {}", 3.0 * sigma);
    }

    #[test]
    fn crop_offsets_cover_the_whole_range() {
        let cfg = AugmentConfig::default();
        let mut rng = sample_rng(9, 1, 0);
        let (mut min_x, mut max_x) = (usize::MAX, 0);
        for _ in 0..2000 {
            let p = sample_params(&cfg, 300, 300, &mut rng).unwrap();
            min_x = min_x.min(p.crop_x);
            max_x = max_x.max(p.crop_x);
        }
        assert_eq!(min_x, 0);
        assert_eq!(max_x, 76);
    }

    #[test]
    fn identical_streams_give_identical_outputs() {
        let img = test_image(300, 300);
        let cfg = AugmentConfig::default();
        let a = augment(&img, &cfg, &mut sample_rng(42, 3, 17)).unwrap();
        let b = augment(&img, &cfg, &mut sample_rng(42, 3, 17)).unwrap();
        assert_eq!(a.data(), b.data());
        let c = augment(&img, &cfg, &mut sample_rng(42, 3, 18)).unwrap();
        assert_ne!(a.data(), c.data(), "different stream should change the draw");
    }

    #[test]
    fn small_images_are_rejected() {
        let img = test_image(100, 100);
        let cfg = AugmentConfig::default();
        assert!(augment(&img, &cfg, &mut sample_rng(0, 0, 0)).is_err());
    }

    #[test]
    fn exact_size_image_gets_the_only_possible_crop() {
        let img = test_image(224, 224);
        let cfg = AugmentConfig::identity();
        let out = augment(&img, &cfg, &mut sample_rng(1, 0, 0)).unwrap();
        assert_eq!(out.data(), img.to_tensor().data());
    }

    #[test]
    fn reflect_folds_into_bounds() {
        for n in [2usize, 5, 224] {
            let limit = (n - 1) as f64;
            for &c in &[-3.7, -0.2, 0.0, 0.4, limit, limit + 0.3, limit * 2.0 + 1.1] {
                let f = reflect(c, n);
                assert!((0.0..=limit).contains(&f), "reflect({c}, {n}) = {f}");
            }
        }
        // Mirrored, not clamped: one past the edge lands one inside.
        assert!((reflect(4.5, 5) - 3.5).abs() < 1e-12);
        assert!((reflect(-1.0, 5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation_catches_bad_ranges() {
        let mut cfg = AugmentConfig::default();
        cfg.brightness_range = (0.5, -0.5);
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.saturation_range = (-0.1, 1.0);
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.crop_size = 0;
        assert!(cfg.validate().is_err());
    }
}
