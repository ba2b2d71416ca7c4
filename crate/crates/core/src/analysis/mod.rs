//! Post-hoc analyses: TB regressed on pathology log-odds, and feature-space
//! embeddings with a 2-d projection.

mod embed;
mod logistic;
mod tsne;

pub use embed::{export_embeddings, project_embeddings, EmbeddingExport, EmbeddingRow, ExportFailure};
pub use logistic::{fit_logistic, fit_logistic_rows, logit, sigmoid, LogOddsFeatures, LogisticModel, LOGIT_EPSILON};
pub use tsne::{Projector, Tsne, TsneConfig};
