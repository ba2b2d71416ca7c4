use serde::{Deserialize, Serialize};

use super::{AgeErrorStats, MeanAuc};

/// AUC for one named output, or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAuc {
    pub label: String,
    pub auc: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
}

/// Bland-Altman summary without the per-sample pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanSummary {
    pub bias: f64,
    pub sd_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

/// Everything `evaluate` reports for one prediction set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub source: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub label_aucs: Vec<LabelAuc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_pathology_auc: Option<MeanAuc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<AgeErrorStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bland_altman: Option<BlandAltmanSummary>,
}

impl From<&super::BlandAltmanResult> for BlandAltmanSummary {
    fn from(r: &super::BlandAltmanResult) -> Self {
        Self {
            bias: r.bias,
            sd_diff: r.sd_diff,
            loa_low: r.loa_low,
            loa_high: r.loa_high,
        }
    }
}
