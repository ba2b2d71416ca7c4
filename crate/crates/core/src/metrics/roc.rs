use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A receiver operating characteristic curve and its area.
///
/// Points are ordered by descending threshold. The first point uses an
/// infinite threshold and sits at (0, 0); the last sits at (1, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

impl RocResult {
    /// Points as CSV rows `threshold,fpr,tpr`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,tpr\n");
        for i in 0..self.fpr.len() {
            s.push_str(&format!("{},{},{}\n", self.thresholds[i], self.fpr[i], self.tpr[i]));
        }
        s
    }
}

/// ROC curve over the unique score thresholds, with the area computed by
/// the trapezoid rule. Tied scores form a single diagonal step, so a tied
/// positive/negative pair contributes half credit.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Config(format!("labels must be 0 or 1, found {l}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Config("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::AucUndefined(format!(
            "{positives} positive and {negatives} negative labels"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (p, n) = (positives as f64, negatives as f64);
    let mut thresholds = vec![f64::INFINITY];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        thresholds.push(threshold);
        fpr.push(fp as f64 / n);
        tpr.push(tp as f64 / p);
    }

    let auc = trapezoid(&fpr, &tpr);
    Ok(RocResult {
        thresholds,
        fpr,
        tpr,
        auc,
    })
}

pub(crate) fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[1] + ys[0]) / 2.0)
        .sum()
}

/// Pool raw scores from several datasets and evaluate them on one scale,
/// without any per-dataset recalibration.
pub fn combined_set_auc(sets: &[(&[f64], &[u8])]) -> Result<RocResult> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (s, l) in sets {
        if s.len() != l.len() {
            return Err(Error::Shape(format!("{} scores for {} labels", s.len(), l.len())));
        }
        scores.extend_from_slice(s);
        labels.extend_from_slice(l);
    }
    roc_auc(&scores, &labels)
}

/// Mean of per-label AUCs. Labels whose evaluation set holds a single class
/// are passed as `None`; they are left out and their indices returned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanAuc {
    pub mean: f64,
    pub included: usize,
    pub excluded: Vec<usize>,
}

pub fn mean_auc(per_label: &[Option<f64>]) -> Result<MeanAuc> {
    let excluded: Vec<usize> = (0..per_label.len()).filter(|&i| per_label[i].is_none()).collect();
    let values: Vec<f64> = per_label.iter().flatten().copied().collect();
    if values.is_empty() {
        return Err(Error::AucUndefined("every label has a single class".into()));
    }
    if !excluded.is_empty() {
        log::warn!("mean AUC excludes single-class labels {excluded:?}");
    }
    Ok(MeanAuc {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        included: values.len(),
        excluded,
    })
}

/// Mean AUC over the 14 pathology labels.
pub fn mean_auc_14(per_label: &[Option<f64>; crate::labels::NUM_PATHOLOGIES]) -> Result<MeanAuc> {
    mean_auc(per_label)
}
