//! ROC/AUC, age-error statistics and Bland-Altman agreement.

mod agreement;
mod report;
mod roc;

pub use agreement::{age_error_stats, bland_altman, AgeErrorStats, BlandAltmanResult, LOA_MULTIPLIER};
pub use report::{BlandAltmanSummary, EvalReport, LabelAuc};
pub use roc::{combined_set_auc, mean_auc, mean_auc_14, roc_auc, MeanAuc, RocResult};
