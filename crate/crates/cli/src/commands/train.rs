use std::path::PathBuf;
use std::str::FromStr;

use metachex::model::{load_checkpoint, save_checkpoint, CheckpointManifest, Model, ModelSpec, PretrainedSource, Variant};
use metachex::rng::substream;
use metachex::training::{train_phase1, train_phase2, Phase1Data, Phase2Data, TrainOutcome, TrainingLog};
use serde::Serialize;

use super::Outcome;
use crate::config::Loaded;
use crate::error::{CliError, Result};
use crate::io::{read_manifest, write_file, Datasets};

/// Where the starting weights come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Init {
    Imagenet,
    Checkpoint(PathBuf),
    Random,
}

impl FromStr for Init {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "imagenet" => Ok(Init::Imagenet),
            "random" => Ok(Init::Random),
            _ => match s.strip_prefix("checkpoint:") {
                Some(p) if !p.is_empty() => Ok(Init::Checkpoint(PathBuf::from(p))),
                _ => Err(format!("expected imagenet, random or checkpoint:PATH, got `{s}`")),
            },
        }
    }
}

impl Init {
    fn label(&self) -> &'static str {
        match self {
            Init::Imagenet => "imagenet",
            Init::Checkpoint(_) => "checkpoint",
            Init::Random => "random",
        }
    }
}

#[derive(Serialize)]
struct LogHeader<'a> {
    config_hash: &'a str,
    phase: u8,
    variant: Variant,
    init: &'a str,
    train_manifest_digest: String,
    validation_manifest_digest: String,
}

#[derive(Serialize)]
struct Summary<'a> {
    config_hash: &'a str,
    phase: u8,
    init: &'a str,
    variant: Variant,
    selection_metric: metachex::training::SelectionMetric,
    best_epoch: usize,
    best_value: f64,
    epochs_run: usize,
    train_images: usize,
    validation_images: usize,
}

fn fresh_model(l: &Loaded, variant: Variant, init: &Init) -> Result<Model> {
    let mut backbone = l.config.model.backbone.clone();
    backbone.pretrained_source = match init {
        Init::Imagenet => PretrainedSource::Imagenet,
        _ => PretrainedSource::Random,
    };
    if let Some(w) = &backbone.weights_path {
        backbone.weights_path = Some(l.data_path(w)?);
    }
    Ok(Model::build(&ModelSpec { variant, backbone }, substream(l.config.seed, "init"))?)
}

fn write_outputs(
    l: &Loaded,
    out_dir: &std::path::Path,
    model: &Model,
    outcome: &TrainOutcome,
    header: &LogHeader,
    summary: &Summary,
    result: &mut Outcome,
) -> Result<()> {
    let log: &TrainingLog = &outcome.log;
    let mut manifest = CheckpointManifest::for_model(model, &l.hash);
    manifest.phase = Some(header.phase);
    manifest.epoch = Some(log.best_epoch);
    manifest.metric_name = Some(format!("{:?}", log.selection_metric).to_lowercase());
    manifest.metric_value = Some(log.best_value);

    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let ckpt = out_dir.join("model.ckpt");
    save_checkpoint(model, &manifest, &ckpt)?;
    result.artifact(&ckpt);

    let log_path = out_dir.join("training_log.jsonl");
    write_file(&log_path, serde_json::to_string(header)? + "\n" + &log.to_jsonl()?)?;
    result.artifact(&log_path);

    let summary_path = out_dir.join("summary.json");
    write_file(&summary_path, serde_json::to_string_pretty(summary)? + "\n")?;
    result.artifact(&summary_path);
    result.details = serde_json::to_value(summary)?;
    Ok(())
}

pub fn run(l: &Loaded, phase: u8, init: Option<Init>, out: Option<PathBuf>) -> Result<Outcome> {
    let cfg = &l.config;
    let data = Datasets::load(l)?;
    let splits = l.splits_dir();
    let mut result = Outcome::new("train", Some(&l.hash));

    match phase {
        1 => {
            let init = init.unwrap_or(Init::Imagenet);
            let train_m = read_manifest(&splits.join("train.txt"))?;
            let val_m = read_manifest(&splits.join("validation.txt"))?;
            let train: Vec<_> = data.cxr_records(&train_m.entries)?.into_iter().cloned().collect();
            let validation: Vec<_> = data.cxr_records(&val_m.entries)?.into_iter().cloned().collect();
            let model = match &init {
                Init::Checkpoint(p) => load_checkpoint(p, Some(cfg.model.variant))?.0,
                other => fresh_model(l, cfg.model.variant, other)?,
            };
            let outcome = train_phase1(
                &model,
                &Phase1Data {
                    train: &train,
                    validation: &validation,
                    images: &data,
                    preprocess: &cfg.preprocess,
                    augment: &cfg.augment.phase1,
                    loss: &cfg.loss,
                },
                &cfg.train.phase1,
                substream(cfg.seed, "phase1"),
            )?;
            let header = LogHeader {
                config_hash: &l.hash,
                phase,
                variant: model.variant(),
                init: init.label(),
                train_manifest_digest: train_m.digest(),
                validation_manifest_digest: val_m.digest(),
            };
            let summary = Summary {
                config_hash: &l.hash,
                phase,
                init: init.label(),
                variant: model.variant(),
                selection_metric: outcome.log.selection_metric,
                best_epoch: outcome.best_epoch(),
                best_value: outcome.best_value(),
                epochs_run: outcome.log.epochs.len(),
                train_images: train.len(),
                validation_images: validation.len(),
            };
            let out_dir = out.unwrap_or_else(|| l.output_dir().join("phase1"));
            write_outputs(l, &out_dir, &model, &outcome, &header, &summary, &mut result)?;
        }
        2 => {
            let init = init.unwrap_or_else(|| Init::Checkpoint(l.output_dir().join("phase1/model.ckpt")));
            let train_m = read_manifest(&splits.join("tb_train.txt"))?;
            let val_m = read_manifest(&splits.join("tb_validation.txt"))?;
            let train: Vec<_> = data.tb_records(&train_m.entries)?.into_iter().cloned().collect();
            let validation: Vec<_> = data.tb_records(&val_m.entries)?.into_iter().cloned().collect();
            let model = match &init {
                Init::Checkpoint(p) => load_checkpoint(p, None)?.0,
                other => fresh_model(l, Variant::Tb, other)?,
            };
            let (model, outcome) = train_phase2(
                model,
                &Phase2Data {
                    train: &train,
                    validation: &validation,
                    images: &data,
                    preprocess: &cfg.preprocess,
                    augment: &cfg.augment.phase2,
                    loss: &cfg.loss,
                },
                &cfg.train.phase2,
                substream(cfg.seed, "phase2"),
            )?;
            let header = LogHeader {
                config_hash: &l.hash,
                phase,
                variant: model.variant(),
                init: init.label(),
                train_manifest_digest: train_m.digest(),
                validation_manifest_digest: val_m.digest(),
            };
            let summary = Summary {
                config_hash: &l.hash,
                phase,
                init: init.label(),
                variant: model.variant(),
                selection_metric: outcome.log.selection_metric,
                best_epoch: outcome.best_epoch(),
                best_value: outcome.best_value(),
                epochs_run: outcome.log.epochs.len(),
                train_images: train.len(),
                validation_images: validation.len(),
            };
            let out_dir = out.unwrap_or_else(|| l.output_dir().join(format!("phase2-{}", init.label())));
            write_outputs(l, &out_dir, &model, &outcome, &header, &summary, &mut result)?;
        }
        other => return Err(CliError::Config(format!("--phase must be 1 or 2, got {other}"))),
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_parses() {
        assert_eq!("imagenet".parse::<Init>().unwrap(), Init::Imagenet);
        assert_eq!("random".parse::<Init>().unwrap(), Init::Random);
        assert_eq!("checkpoint:a/b.ckpt".parse::<Init>().unwrap(), Init::Checkpoint("a/b.ckpt".into()));
        assert!("checkpoint:".parse::<Init>().is_err());
        assert!("vgg".parse::<Init>().is_err());
    }
}
