use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use metachex::labels::{NUM_PATHOLOGIES, PATHOLOGIES};
use metachex::metrics::{
    age_error_stats, bland_altman, combined_set_auc, mean_auc_14, roc_auc, BlandAltmanSummary, EvalReport, LabelAuc,
};
use metachex::model::Variant;
use metachex::preprocess::unscale_age;
use serde::Serialize;

use super::Outcome;
use crate::config::Loaded;
use crate::error::{CliError, Result};
use crate::io::{read_manifest, write_file, Datasets, PredictionFile};

#[derive(Debug, Serialize)]
struct EvalOutput {
    config_hash: String,
    reports: Vec<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    combined: Option<LabelAuc>,
}

pub fn label_auc(label: &str, scores: &[f64], labels: &[u8]) -> LabelAuc {
    let positives = labels.iter().filter(|&&y| y == 1).count();
    LabelAuc {
        label: label.to_string(),
        auc: roc_auc(scores, labels).ok().map(|r| r.auc),
        positives,
        negatives: labels.len() - positives,
    }
}

/// Loads a prediction file and checks it against the manifest it claims to
/// cover.
pub fn checked_predictions(pred_path: &Path, manifest_path: &Path, config_hash: &str) -> Result<PredictionFile> {
    let preds = PredictionFile::read(pred_path)?;
    let manifest = read_manifest(manifest_path)?;
    if preds.manifest_digest != manifest.digest() {
        return Err(CliError::Mismatch(format!(
            "{} was produced from a different manifest than {}",
            pred_path.display(),
            manifest_path.display()
        )));
    }
    let predicted: BTreeSet<&str> = preds.records.iter().map(|r| r.image_id.as_str()).collect();
    let listed: BTreeSet<&str> = manifest.entries.iter().map(String::as_str).collect();
    if predicted != listed || preds.records.len() != manifest.len() {
        return Err(CliError::Mismatch(format!(
            "{} does not hold exactly one row per image of {}",
            pred_path.display(),
            manifest_path.display()
        )));
    }
    if preds.config_hash != config_hash {
        log::warn!("{} was produced under a different configuration", pred_path.display());
    }
    Ok(preds)
}

pub fn tb_scores(preds: &PredictionFile, data: &Datasets) -> Result<(Vec<f64>, Vec<u8>)> {
    if preds.variant != Variant::Tb {
        return Err(CliError::Mismatch(format!("expected TB predictions, got {}", preds.variant)));
    }
    let scores = preds.records.iter().map(|r| r.tb_prob.unwrap_or(f64::NAN)).collect();
    let labels = preds.records.iter().map(|r| data.tb_label(&r.image_id)).collect::<Result<_>>()?;
    Ok((scores, labels))
}

fn report(l: &Loaded, source: &Path, preds: &PredictionFile, data: &Datasets) -> Result<EvalReport> {
    let mut rep = EvalReport {
        config_hash: l.hash.clone(),
        source: source.display().to_string(),
        n: preds.records.len(),
        ..Default::default()
    };
    if preds.variant == Variant::Tb {
        let (scores, labels) = tb_scores(preds, data)?;
        rep.label_aucs.push(label_auc("tb", &scores, &labels));
        return Ok(rep);
    }

    let recs = data.cxr_records(&preds.ids())?;
    let mut per_label = [None; NUM_PATHOLOGIES];
    for (k, name) in PATHOLOGIES.iter().enumerate() {
        let scores: Vec<f64> = preds.records.iter().map(|r| r.pathology_probs.map_or(f64::NAN, |p| p[k])).collect();
        let labels: Vec<u8> = recs.iter().map(|r| r.pathology[k]).collect();
        let a = label_auc(name, &scores, &labels);
        per_label[k] = a.auc;
        rep.label_aucs.push(a);
    }
    rep.mean_pathology_auc = mean_auc_14(&per_label).ok();

    if preds.variant == Variant::Metachexnet {
        let g: Vec<f64> = preds.records.iter().map(|r| r.gender_prob.unwrap_or(f64::NAN)).collect();
        let gl: Vec<u8> = recs.iter().map(|r| r.gender.target() as u8).collect();
        rep.label_aucs.push(label_auc("gender", &g, &gl));
        let p: Vec<f64> = preds.records.iter().map(|r| r.position_prob.unwrap_or(f64::NAN)).collect();
        let pl: Vec<u8> = recs.iter().map(|r| r.position.target() as u8).collect();
        rep.label_aucs.push(label_auc("position", &p, &pl));

        let scaled: Vec<f64> = preds.records.iter().map(|r| r.age_scaled.unwrap_or(f64::NAN)).collect();
        let years: Vec<f64> = recs.iter().map(|r| r.age_years).collect();
        rep.age = Some(age_error_stats(&scaled, &years, &l.config.preprocess)?);
        let predicted: Vec<f64> = scaled.iter().map(|&s| unscale_age(s, &l.config.preprocess)).collect();
        rep.bland_altman = bland_altman(&predicted, &years).ok().map(|b| BlandAltmanSummary::from(&b));
    }
    Ok(rep)
}

pub fn run(l: &Loaded, predictions: &[PathBuf], manifests: &[PathBuf], combine: bool, out: Option<PathBuf>) -> Result<Outcome> {
    if predictions.is_empty() {
        return Err(CliError::Config("at least one --predictions file is required".into()));
    }
    if predictions.len() != manifests.len() {
        return Err(CliError::Config(format!(
            "{} prediction files but {} manifests; pass one --manifest per --predictions",
            predictions.len(),
            manifests.len()
        )));
    }
    let data = Datasets::load(l)?;
    let mut files = Vec::new();
    let mut reports = Vec::new();
    for (p, m) in predictions.iter().zip(manifests) {
        let preds = checked_predictions(p, m, &l.hash)?;
        reports.push(report(l, p, &preds, &data)?);
        files.push(preds);
    }

    let combined = if combine {
        let sets = files.iter().map(|f| tb_scores(f, &data)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<(&[f64], &[u8])> = sets.iter().map(|(s, y)| (s.as_slice(), y.as_slice())).collect();
        let roc = combined_set_auc(&refs)?;
        let labels: Vec<u8> = sets.iter().flat_map(|(_, y)| y.iter().copied()).collect();
        let positives = labels.iter().filter(|&&y| y == 1).count();
        Some(LabelAuc {
            label: "tb_combined".into(),
            auc: Some(roc.auc),
            positives,
            negatives: labels.len() - positives,
        })
    } else {
        None
    };

    let output = EvalOutput {
        config_hash: l.hash.clone(),
        reports,
        combined,
    };
    let path = out.unwrap_or_else(|| predictions[0].with_extension("eval.json"));
    write_file(&path, serde_json::to_string_pretty(&output)? + "\n")?;

    let mut outcome = Outcome::new("evaluate", Some(&l.hash));
    outcome.artifact(path);
    outcome.details = serde_json::to_value(&output)?;
    Ok(outcome)
}
