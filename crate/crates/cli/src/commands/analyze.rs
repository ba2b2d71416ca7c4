use std::path::{Path, PathBuf};

use metachex::analysis::{export_embeddings, fit_logistic, project_embeddings, LogOddsFeatures, LogisticModel, Tsne};
use metachex::data::ImageSource;
use metachex::model::{images_to_tensor, load_checkpoint, PredictionRecord};
use metachex::preprocess::preprocess_image;
use metachex::rng::substream;
use serde::Serialize;

use super::Outcome;
use crate::config::Loaded;
use crate::error::{CliError, Result};
use crate::io::{default_path, read_manifest, write_file, Datasets, PredictionFile};

#[derive(Serialize)]
struct LogitOutput<'a> {
    config_hash: &'a str,
    source: String,
    model: &'a LogisticModel,
}

fn infer(l: &Loaded, checkpoint: &Path, manifest: &Path, data: &Datasets) -> Result<Vec<PredictionRecord>> {
    let (model, _) = load_checkpoint(checkpoint, None)?;
    let m = read_manifest(manifest)?;
    let mut out = Vec::with_capacity(m.len());
    for chunk in m.entries.chunks(l.config.analysis.batch_size) {
        let images = chunk
            .iter()
            .map(|id| Ok(preprocess_image(&data.load(id)?, &l.config.preprocess)?))
            .collect::<Result<Vec<_>>>()?;
        out.extend(PredictionRecord::from_outputs(chunk, &model.forward(&images_to_tensor(&images)?, false)?)?);
    }
    Ok(out)
}

/// TB label regressed on the 14 pathology log-odds. The pathology scores
/// come from a prediction file or from running a checkpoint over a TB
/// manifest.
pub fn tb_logit(
    l: &Loaded,
    predictions: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    manifest: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<Outcome> {
    let data = Datasets::load(l)?;
    let (records, source) = match (predictions, checkpoint, manifest) {
        (Some(p), None, None) => (PredictionFile::read(&p)?.records, p.display().to_string()),
        (None, Some(c), Some(m)) => (infer(l, &c, &m, &data)?, format!("{} on {}", c.display(), m.display())),
        _ => {
            return Err(CliError::Config(
                "tb-logit takes either --predictions FILE or --checkpoint CKPT --manifest MANIFEST".into(),
            ))
        }
    };
    let features = records
        .iter()
        .map(|r| Ok(LogOddsFeatures::from_prediction(r, data.tb_label(&r.image_id)?)?))
        .collect::<Result<Vec<_>>>()?;
    let model = fit_logistic(&features, l.config.analysis.l2_strength)?;

    let path = default_path(l, out, "analysis/tb_logit.json");
    let body = LogitOutput {
        config_hash: &l.hash,
        source,
        model: &model,
    };
    write_file(&path, serde_json::to_string_pretty(&body)? + "\n")?;
    let mut outcome = Outcome::new("analyze", Some(&l.hash));
    outcome.artifact(path);
    outcome.details = serde_json::json!({
        "converged": model.converged,
        "fit_accuracy": model.fit_accuracy,
        "n": model.n,
    });
    Ok(outcome)
}

/// Backbone features over a ChestXray14 manifest, optionally with t-SNE
/// coordinates.
pub fn embed(l: &Loaded, checkpoint: &Path, manifest: &Path, project: bool, out: Option<PathBuf>) -> Result<Outcome> {
    let data = Datasets::load(l)?;
    let (model, _) = load_checkpoint(checkpoint, None)?;
    let m = read_manifest(manifest)?;
    let records = data.cxr_records(&m.entries)?;
    let (mut export, failures) = export_embeddings(&model, &records, &data, &l.config.preprocess, l.config.analysis.batch_size)?;
    if project {
        let tsne = Tsne::new(l.config.analysis.tsne.clone());
        project_embeddings(&mut export, &tsne, substream(l.config.seed, "tsne"))?;
    }

    let path = default_path(l, out, "analysis/embeddings.csv");
    write_file(&path, export.to_csv(Some(&format!("config_hash: {}", l.hash))))?;
    let mut outcome = Outcome::new("analyze", Some(&l.hash));
    outcome.artifact(&path);
    outcome.details = serde_json::json!({ "rows": export.len(), "projected": export.is_projected() });
    if !failures.is_empty() {
        let fpath = path.with_extension("failures.json");
        write_file(&fpath, serde_json::to_string_pretty(&failures)? + "\n")?;
        return Err(CliError::Incomplete(format!(
            "{} of {} images could not be embedded; see {}",
            failures.len(),
            m.len(),
            fpath.display()
        )));
    }
    Ok(outcome)
}
