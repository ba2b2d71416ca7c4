use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{unscale_age, PreprocessConfig};

/// Signed and absolute age errors in years (prediction minus label).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeErrorStats {
    pub mean_error: f64,
    pub std_error: f64,
    pub mean_abs_error: f64,
    pub n: usize,
}

/// Bland-Altman agreement summary. Limits are `bias ∓ 1.96·sd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanResult {
    pub bias: f64,
    pub sd_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    /// `(mean of the pair, prediction - label)` for each sample.
    pub pairs: Vec<(f64, f64)>,
}

pub const LOA_MULTIPLIER: f64 = 1.96;

fn check_pairs(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: a.len() });
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
fn sample_std(xs: &[f64], mean: f64) -> f64 {
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Age error statistics from scaled predictions and labels in years.
pub fn age_error_stats(pred_scaled: &[f64], label_years: &[f64], cfg: &PreprocessConfig) -> Result<AgeErrorStats> {
    check_pairs(pred_scaled, label_years)?;
    let errors: Vec<f64> = pred_scaled
        .iter()
        .zip(label_years)
        .map(|(&p, &y)| unscale_age(p, cfg) - y)
        .collect();
    let mean_error = mean(&errors);
    Ok(AgeErrorStats {
        mean_error,
        std_error: sample_std(&errors, mean_error),
        mean_abs_error: errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64,
        n: errors.len(),
    })
}

pub fn bland_altman(pred_years: &[f64], label_years: &[f64]) -> Result<BlandAltmanResult> {
    check_pairs(pred_years, label_years)?;
    let pairs: Vec<(f64, f64)> = pred_years
        .iter()
        .zip(label_years)
        .map(|(&p, &y)| ((p + y) / 2.0, p - y))
        .collect();
    let diffs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let bias = mean(&diffs);
    let sd_diff = sample_std(&diffs, bias);
    Ok(BlandAltmanResult {
        bias,
        sd_diff,
        loa_low: bias - LOA_MULTIPLIER * sd_diff,
        loa_high: bias + LOA_MULTIPLIER * sd_diff,
        pairs,
    })
}
