use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Phase1,
    Phase2,
}

/// Stochastic augmentation settings.
///
/// Phase 1 only flips, with probability `flip_prob`. Phase 2 runs flip,
/// zoom and intensity scaling, each independently with probability
/// `per_op_prob`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub phase: Phase,
    pub flip_prob: f64,
    pub scale_range: [f32; 2],
    pub intensity_range: [f32; 2],
    pub per_op_prob: f64,
}

impl AugmentConfig {
    pub fn phase1() -> Self {
        Self {
            phase: Phase::Phase1,
            flip_prob: 0.5,
            scale_range: [1.0, 1.0],
            intensity_range: [1.0, 1.0],
            per_op_prob: 0.5,
        }
    }

    pub fn phase2() -> Self {
        Self {
            phase: Phase::Phase2,
            flip_prob: 0.5,
            scale_range: [0.9, 1.1],
            intensity_range: [0.8, 1.3],
            per_op_prob: 0.5,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(self.flip_prob) || !prob_ok(self.per_op_prob) {
            return Err(crate::Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        if self.scale_range[0] > self.scale_range[1] || self.intensity_range[0] > self.intensity_range[1] {
            return Err(crate::Error::Config("augmentation ranges need lo <= hi".into()));
        }
        if self.scale_range[0] <= 0.0 {
            return Err(crate::Error::Config("scale factors must be positive".into()));
        }
        Ok(())
    }
}

/// The concrete random choices for one augmentation call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub scale: Option<f32>,
    pub intensity: Option<f32>,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        flip: false,
        scale: None,
        intensity: None,
    };

    /// Sample the choices. The same number of values is drawn whatever the
    /// outcome, so a stream stays aligned across configurations.
    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let u_flip: f64 = rng.random();
        let u_scale: f64 = rng.random();
        let t_scale: f32 = rng.random();
        let u_int: f64 = rng.random();
        let t_int: f32 = rng.random();
        let lerp = |[lo, hi]: [f32; 2], t: f32| lo + (hi - lo) * t;
        match cfg.phase {
            Phase::Phase1 => AugmentDraw {
                flip: u_flip < cfg.flip_prob,
                scale: None,
                intensity: None,
            },
            Phase::Phase2 => AugmentDraw {
                flip: u_flip < cfg.per_op_prob,
                scale: (u_scale < cfg.per_op_prob).then(|| lerp(cfg.scale_range, t_scale)),
                intensity: (u_int < cfg.per_op_prob).then(|| lerp(cfg.intensity_range, t_int)),
            },
        }
    }

    /// Apply in the fixed order flip, zoom, intensity. Intensities are
    /// clipped to 0..=255 after scaling.
    pub fn apply(&self, image: &Image) -> Image {
        let mut out = if self.flip { image.flip_horizontal() } else { image.clone() };
        if let Some(s) = self.scale {
            out = out.zoom(s);
        }
        if let Some(m) = self.intensity {
            out = out.map(|v| (v * m).clamp(0.0, 255.0));
        }
        out
    }
}

/// Augment a raw (resized, not yet normalized) image.
pub fn augment<R: Rng + ?Sized>(image: &Image, cfg: &AugmentConfig, rng: &mut R) -> Image {
    AugmentDraw::sample(cfg, rng).apply(image)
}
