use metachex::data::{
    class_counts, fixed_tb_split, load_tb_dataset, partition_by_patient, read_chestxray14_metadata, ClassCounts, SplitName,
    SplitSummary, SplitSummaryEntry, TbSampleRecord,
};
use metachex::labels::DatasetTag;
use metachex::rng::substream;

use super::Outcome;
use crate::config::Loaded;
use crate::error::{CliError, Result};
use crate::io::{write_file, write_manifest};

pub fn run(l: &Loaded) -> Result<Outcome> {
    let cfg = &l.config;
    let dir = l.splits_dir();
    let mut outcome = Outcome::new("prepare", Some(&l.hash));

    if cfg.data.metadata.is_none() && cfg.data.shenzhen.is_none() {
        return Err(CliError::Config("nothing to prepare: set `data.metadata` and/or `data.shenzhen`".into()));
    }

    if let Some(meta) = &cfg.data.metadata {
        let records = read_chestxray14_metadata(&l.data_path(meta)?, &cfg.data.columns)?;
        let seed = substream(cfg.seed, "split");
        let manifests = partition_by_patient(&records, cfg.split.fractions, seed)?;
        let mut splits = Vec::new();
        for m in &manifests {
            let path = dir.join(format!("{}.txt", m.split_name));
            write_manifest(&path, m, &l.hash)?;
            outcome.artifact(path);
            splits.push(SplitSummaryEntry {
                split: m.split_name,
                images: m.len(),
                patients: m.patient_ids.len(),
                negatives: None,
                positives: None,
            });
        }
        let summary = SplitSummary {
            seed,
            fractions: Some(cfg.split.fractions),
            config_hash: l.hash.clone(),
            splits,
            unassigned: Vec::new(),
        };
        let path = dir.join("summary.json");
        write_file(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
        outcome.artifact(path);
    }

    if let Some(shenzhen) = &cfg.data.shenzhen {
        let mut records = load_tb_dataset(&l.data_path(shenzhen)?, &cfg.data.labeling, DatasetTag::Shenzhen)?;
        if let Some(mont) = &cfg.data.montgomery {
            records.extend(load_tb_dataset(&l.data_path(mont)?, &cfg.data.labeling, DatasetTag::Montgomery)?);
        }
        let counts = |[n, p]: [usize; 2]| ClassCounts::new(n, p);
        let plan = [
            (SplitName::Train, counts(cfg.split.tb_train)),
            (SplitName::Validation, counts(cfg.split.tb_validation)),
            (SplitName::Test, counts(cfg.split.tb_test)),
        ];
        let seed = substream(cfg.seed, "tb-split");
        let (manifests, leftover) = fixed_tb_split(&records, &plan, seed)?;
        if !leftover.is_empty() {
            log::warn!("{} Shenzhen images are not assigned to any split", leftover.len());
        }
        let by_id: std::collections::HashMap<&str, &TbSampleRecord> = records.iter().map(|r| (r.image_id.as_str(), r)).collect();
        let mut splits = Vec::new();
        for m in &manifests {
            let path = dir.join(format!("tb_{}.txt", m.split_name));
            write_manifest(&path, m, &l.hash)?;
            outcome.artifact(path);
            let members: Vec<TbSampleRecord> = m.entries.iter().map(|id| by_id[id.as_str()].clone()).collect();
            let c = class_counts(&members);
            splits.push(SplitSummaryEntry {
                split: m.split_name,
                images: m.len(),
                patients: 0,
                negatives: Some(c.negative),
                positives: Some(c.positive),
            });
        }
        let summary = SplitSummary {
            seed,
            fractions: None,
            config_hash: l.hash.clone(),
            splits,
            unassigned: leftover,
        };
        let path = dir.join("tb_summary.json");
        write_file(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
        outcome.artifact(path);
    }
    Ok(outcome)
}
