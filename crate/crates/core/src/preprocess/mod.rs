//! Deterministic preprocessing and the phase-specific augmentation pipelines.
//!
//! The training data path is `load -> prepare_raw -> augment -> normalize`:
//! augmentation works on raw 0..=255 intensities so that the intensity
//! multiplier and clipping are meaningful, and normalization happens last.

mod augment;
mod image;

pub use self::augment::{augment, AugmentConfig, AugmentDraw, Phase};
pub use self::image::Image;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub target_size: (usize, usize),
    pub channel_mean: [f32; 3],
    pub channel_std: [f32; 3],
    pub age_scale_max: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_size: (224, 224),
            channel_mean: IMAGENET_MEAN,
            channel_std: IMAGENET_STD,
            age_scale_max: 100.0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_size.0 == 0 || self.target_size.1 == 0 {
            return Err(Error::Config(format!("target_size must be positive, got {:?}", self.target_size)));
        }
        if self.channel_std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config(format!("channel_std must be positive, got {:?}", self.channel_std)));
        }
        if !(self.age_scale_max > 0.0) {
            return Err(Error::Config("age_scale_max must be positive".into()));
        }
        Ok(())
    }
}

/// Replicate grayscale to three channels and resize to the target size.
/// Intensities stay on the raw scale.
pub fn prepare_raw(raw: &Image, cfg: &PreprocessConfig) -> Result<Image> {
    if raw.is_empty() || raw.height() == 0 || raw.width() == 0 {
        return Err(Error::Image("zero-sized image".into()));
    }
    let (h, w) = cfg.target_size;
    Ok(raw.to_rgb()?.resize_bilinear(h, w))
}

/// Per-channel `(pixel / 255 - mean) / std`.
pub fn normalize(img: &Image, cfg: &PreprocessConfig) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!("normalize expects 3 channels, got {}", img.channels())));
    }
    let (_, h, w) = img.shape();
    Ok(Image::from_fn(3, h, w, |c, y, x| {
        (img.get(c, y, x) / 255.0 - cfg.channel_mean[c]) / cfg.channel_std[c]
    }))
}

/// Full deterministic preprocessing: channel replication, resize, normalization.
pub fn preprocess_image(raw: &Image, cfg: &PreprocessConfig) -> Result<Image> {
    normalize(&prepare_raw(raw, cfg)?, cfg)
}

/// Map an age in years onto the regression target axis. Ages above
/// `age_scale_max` are passed through (giving values above 1), not clamped.
pub fn scale_age(age_years: f64, cfg: &PreprocessConfig) -> Result<f64> {
    if !(age_years >= 0.0) {
        return Err(Error::Config(format!("age must be non-negative, got {age_years}")));
    }
    Ok(age_years / cfg.age_scale_max)
}

pub fn unscale_age(scaled: f64, cfg: &PreprocessConfig) -> f64 {
    scaled * cfg.age_scale_max
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn normalization_zero_point() {
        let cfg = PreprocessConfig::default();
        let raw = Image::from_fn(3, 10, 10, |c, _, _| 255.0 * cfg.channel_mean[c]);
        let out = preprocess_image(&raw, &cfg).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn output_is_target_size() {
        let cfg = PreprocessConfig::default();
        let out = preprocess_image(&Image::filled(1, 448, 448, 10.0), &cfg).unwrap();
        assert_eq!(out.shape(), (3, 224, 224));
    }

    #[test]
    fn grayscale_channels_agree_after_undoing_affine() {
        let cfg = PreprocessConfig::default();
        let mut rng = crate::rng::rng_from(9);
        let raw = Image::from_fn(1, 50, 37, |_, _, _| rng.random_range(0.0..255.0));
        let out = preprocess_image(&raw, &cfg).unwrap();
        let undo = |c: usize| -> Vec<f32> {
            out.channel(c)
                .iter()
                .map(|v| (v * cfg.channel_std[c] + cfg.channel_mean[c]) * 255.0)
                .collect()
        };
        let (r, g, b) = (undo(0), undo(1), undo(2));
        for i in 0..r.len() {
            assert!((r[i] - g[i]).abs() < 1e-3 && (r[i] - b[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_sized_image_is_rejected() {
        let empty = Image::new(1, 0, 0, vec![]).unwrap();
        assert!(preprocess_image(&empty, &PreprocessConfig::default()).is_err());
    }

    #[test]
    fn age_scaling() {
        let cfg = PreprocessConfig::default();
        assert_eq!(scale_age(0.0, &cfg).unwrap(), 0.0);
        assert_eq!(scale_age(100.0, &cfg).unwrap(), 1.0);
        assert_eq!(scale_age(155.0, &cfg).unwrap(), 1.55);
        assert!(scale_age(-1.0, &cfg).is_err());
        for age in [0.0, 1.0, 37.5, 99.9, 155.0] {
            let back = unscale_age(scale_age(age, &cfg).unwrap(), &cfg);
            assert!((back - age).abs() <= 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = PreprocessConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.channel_std[1] = 0.0;
        assert!(cfg.validate().is_err());
    }
}
