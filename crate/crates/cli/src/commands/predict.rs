use std::path::{Path, PathBuf};

use metachex::model::{images_to_tensor, load_checkpoint, PredictionRecord};
use metachex::preprocess::preprocess_image;
use metachex::data::ImageSource;

use super::Outcome;
use crate::config::Loaded;
use crate::error::Result;
use crate::io::{default_path, file_digest, read_manifest, write_file, Datasets, PredictionFile};

pub fn run(l: &Loaded, checkpoint: &Path, manifest: &Path, out: Option<PathBuf>) -> Result<Outcome> {
    let cfg = &l.config;
    let (model, _) = load_checkpoint(checkpoint, None)?;
    let m = read_manifest(manifest)?;
    let data = Datasets::load(l)?;

    let mut records: Vec<PredictionRecord> = Vec::with_capacity(m.len());
    for chunk in m.entries.chunks(cfg.analysis.batch_size) {
        let images = chunk
            .iter()
            .map(|id| Ok(preprocess_image(&data.load(id)?, &cfg.preprocess)?))
            .collect::<Result<Vec<_>>>()?;
        let outputs = model.forward(&images_to_tensor(&images)?, false)?;
        records.extend(PredictionRecord::from_outputs(chunk, &outputs)?);
    }

    let file = PredictionFile {
        config_hash: l.hash.clone(),
        variant: model.variant(),
        checkpoint_digest: file_digest(checkpoint)?,
        manifest_split: m.split_name.to_string(),
        manifest_digest: m.digest(),
        records,
    };
    let stem = manifest.file_stem().and_then(|s| s.to_str()).unwrap_or("manifest");
    let path = default_path(l, out, &format!("predictions/{}_{stem}.csv", model.variant()));
    write_file(&path, file.to_csv(&cfg.preprocess))?;

    let mut outcome = Outcome::new("predict", Some(&l.hash));
    outcome.artifact(path);
    outcome.details = serde_json::json!({ "rows": file.records.len(), "variant": model.variant() });
    Ok(outcome)
}
