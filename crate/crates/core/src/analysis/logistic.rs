use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{NUM_PATHOLOGIES, PATHOLOGIES};
use crate::model::PredictionRecord;

pub const LOGIT_EPSILON: f64 = 1e-7;

const GRADIENT_TOLERANCE: f64 = 1e-8;
const MAX_ITERATIONS: usize = 200;
// Beyond this coefficient norm the fit is treated as diverging (separable
// data without a penalty).
const DIVERGENCE_NORM: f64 = 1e6;

/// `ln(p / (1 - p))` after clamping `p` to `[eps, 1 - eps]`.
pub fn logit(p: f64, eps: f64) -> f64 {
    let p = p.clamp(eps, 1.0 - eps);
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// The 14 pathology log-odds of one image and its TB label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogOddsFeatures {
    pub image_id: String,
    pub x: [f64; NUM_PATHOLOGIES],
    pub tb_label: u8,
}

impl LogOddsFeatures {
    pub fn from_probabilities(image_id: impl Into<String>, probs: &[f64; NUM_PATHOLOGIES], tb_label: u8) -> Self {
        Self {
            image_id: image_id.into(),
            x: probs.map(|p| logit(p, LOGIT_EPSILON)),
            tb_label,
        }
    }

    pub fn from_prediction(pred: &PredictionRecord, tb_label: u8) -> Result<Self> {
        let probs = pred.pathology_probs.as_ref().ok_or_else(|| {
            Error::Shape(format!("prediction for {} carries no pathology probabilities", pred.image_id))
        })?;
        Ok(Self::from_probabilities(pred.image_id.clone(), probs, tb_label))
    }
}

/// A fitted L2-penalized logistic regression. The penalty `l2/2 * |β|²` is
/// applied to the coefficients only, never to the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub feature_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub l2_strength: f64,
    /// Training accuracy at threshold 0.5.
    pub fit_accuracy: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub n: usize,
}

impl LogisticModel {
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.intercept + self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>())
    }

    pub fn coefficient_norm(&self) -> f64 {
        self.coefficients.iter().map(|b| b * b).sum::<f64>().sqrt()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Penalized log-likelihood `Σ [y·z − ln(1+e^z)] − l2/2·|β|²`, with
/// `z = intercept + x·β`. `theta = [intercept, β…]`.
pub(crate) fn penalized_log_likelihood(rows: &[Vec<f64>], y: &[u8], l2: f64, theta: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (x, &yi) in rows.iter().zip(y) {
        let z = theta[0] + x.iter().zip(&theta[1..]).map(|(a, b)| a * b).sum::<f64>();
        // ln(1 + e^z) without overflow
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        ll += f64::from(yi) * z - softplus;
    }
    ll - 0.5 * l2 * theta[1..].iter().map(|b| b * b).sum::<f64>()
}

/// Fits TB against the 14 log-odds, coefficients in canonical label order.
pub fn fit_logistic(features: &[LogOddsFeatures], l2_strength: f64) -> Result<LogisticModel> {
    let rows: Vec<Vec<f64>> = features.iter().map(|f| f.x.to_vec()).collect();
    let y: Vec<u8> = features.iter().map(|f| f.tb_label).collect();
    let names: Vec<String> = PATHOLOGIES.iter().map(|s| s.to_string()).collect();
    fit_logistic_rows(&rows, &y, &names, l2_strength)
}

/// Newton / iteratively reweighted least squares on an arbitrary design
/// matrix, with step halving to guarantee ascent.
pub fn fit_logistic_rows(rows: &[Vec<f64>], y: &[u8], names: &[String], l2_strength: f64) -> Result<LogisticModel> {
    if !(l2_strength >= 0.0) || !l2_strength.is_finite() {
        return Err(Error::Config(format!("l2_strength must be non-negative, got {l2_strength}")));
    }
    if rows.len() != y.len() {
        return Err(Error::Shape(format!("{} rows for {} labels", rows.len(), y.len())));
    }
    let d = names.len();
    if let Some(bad) = rows.iter().position(|r| r.len() != d) {
        return Err(Error::Shape(format!("row {bad} has {} features, expected {d}", rows[bad].len())));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config("features must be finite".into()));
    }
    if let Some(v) = y.iter().find(|&&v| v > 1) {
        return Err(Error::Config(format!("labels must be 0 or 1, found {v}")));
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::SingleClass(format!("{} samples, {positives} positive", y.len())));
    }
    let n = rows.len();
    if n <= d {
        log::warn!("logistic fit on {n} samples with {d} features; coefficients will be poorly determined");
    }

    let p = d + 1;
    let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let yv = DVector::from_iterator(n, y.iter().map(|&v| f64::from(v)));
    let penalty = DVector::from_fn(p, |j, _| if j == 0 { 0.0 } else { l2_strength });

    let mut theta = DVector::<f64>::zeros(p);
    let mut objective = penalized_log_likelihood(rows, y, l2_strength, theta.as_slice());
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;

    while iterations < MAX_ITERATIONS {
        let z = &x * &theta;
        let mu = z.map(sigmoid);
        let w = mu.map(|m| m * (1.0 - m));
        let grad = x.transpose() * (&yv - &mu) - penalty.component_mul(&theta);
        grad_norm = grad.norm();
        if grad_norm < GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        iterations += 1;

        // Negative Hessian: Xᵀ W X + diag(penalty)
        let mut h = x.transpose() * DMatrix::from_fn(n, p, |i, j| w[i] * x[(i, j)]);
        for j in 0..p {
            h[(j, j)] += penalty[j];
        }
        let Some(chol) = h.cholesky() else {
            break;
        };
        let step = chol.solve(&grad);

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate = &theta + &step * t;
            let value = penalized_log_likelihood(rows, y, l2_strength, candidate.as_slice());
            // Close to the optimum the gain of a Newton step falls below the
            // rounding error of the summed likelihood; don't reject it for that.
            let slack = 64.0 * f64::EPSILON * (objective.abs() + 1.0);
            if value >= objective - slack {
                theta = candidate;
                objective = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || theta.rows(1, d).norm() > DIVERGENCE_NORM {
            break;
        }
    }
    let coefficients: Vec<f64> = theta.iter().skip(1).copied().collect();
    let intercept = theta[0];
    let correct = rows
        .iter()
        .zip(y)
        .filter(|(r, &yi)| {
            let z = intercept + r.iter().zip(&coefficients).map(|(a, b)| a * b).sum::<f64>();
            (sigmoid(z) >= 0.5) == (yi == 1)
        })
        .count();

    // Without a penalty a perfectly separating fit has no finite optimum;
    // the gradient only vanishes because the coefficients run off.
    if l2_strength == 0.0 && correct == n {
        converged = false;
        log::warn!("labels are perfectly separable and l2_strength is 0; coefficients are unbounded");
    } else if !converged {
        log::warn!("logistic fit did not converge after {iterations} iterations (gradient norm {grad_norm:e})");
    }

    Ok(LogisticModel {
        feature_names: names.to_vec(),
        coefficients,
        intercept,
        l2_strength,
        fit_accuracy: correct as f64 / n as f64,
        converged,
        iterations,
        gradient_norm: grad_norm,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logit_examples() {
        assert_eq!(logit(0.5, LOGIT_EPSILON), 0.0);
        assert!((logit(0.7310585786300049, LOGIT_EPSILON) - 1.0).abs() < 1e-12);
        assert_eq!(logit(0.0, LOGIT_EPSILON), logit(LOGIT_EPSILON, LOGIT_EPSILON));
        assert!(logit(1.0, LOGIT_EPSILON).is_finite());
    }

    #[test]
    fn logit_inverts_sigmoid() {
        for i in -100..=100 {
            let z = i as f64 / 10.0;
            assert!((logit(sigmoid(z), LOGIT_EPSILON) - z).abs() < 1e-9, "{z}");
        }
    }

    #[test]
    fn single_class_is_an_error() {
        let rows = vec![vec![1.0], vec![2.0]];
        let err = fit_logistic_rows(&rows, &[1, 1], &["a".into()], 1.0).unwrap_err();
        assert!(matches!(err, Error::SingleClass(_)));
    }

    #[test]
    fn separable_without_penalty_is_flagged() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![if i < 10 { -1.0 } else { 1.0 }]).collect();
        let y: Vec<u8> = (0..20).map(|i| u8::from(i >= 10)).collect();
        let m = fit_logistic_rows(&rows, &y, &["x".into()], 0.0).unwrap();
        assert!(!m.converged);
        let m = fit_logistic_rows(&rows, &y, &["x".into()], 1.0).unwrap();
        assert!(m.converged);
        assert_eq!(m.fit_accuracy, 1.0);
    }

    #[test]
    fn zero_features_balanced_labels() {
        let feats: Vec<LogOddsFeatures> = (0..10)
            .map(|i| LogOddsFeatures {
                image_id: i.to_string(),
                x: [0.0; NUM_PATHOLOGIES],
                tb_label: (i % 2) as u8,
            })
            .collect();
        let m = fit_logistic(&feats, 1.0).unwrap();
        assert!(m.coefficients.iter().all(|&b| b == 0.0));
        assert_eq!(m.intercept, 0.0);
        assert_eq!(m.fit_accuracy, 0.5);
        assert_eq!(m.feature_names[0], "Atelectasis");
    }
}
