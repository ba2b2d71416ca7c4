use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{SplitManifest, SplitName};
use crate::error::{Error, Result};
use crate::labels::DatasetTag;
use crate::rng::{rng_from, substream};

/// One tuberculosis-dataset image. `label` is 1 for TB positive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TbSampleRecord {
    pub image_id: String,
    pub label: u8,
    pub dataset_tag: DatasetTag,
    pub path: PathBuf,
}

/// How a file name encodes its label: a suffix just before the extension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelingSpec {
    pub negative_suffix: String,
    pub positive_suffix: String,
    pub extensions: Vec<String>,
}

impl Default for LabelingSpec {
    fn default() -> Self {
        Self {
            negative_suffix: "_0".into(),
            positive_suffix: "_1".into(),
            extensions: vec!["png".into()],
        }
    }
}

impl LabelingSpec {
    fn label_of(&self, stem: &str) -> Option<u8> {
        if stem.ends_with(&self.positive_suffix) {
            Some(1)
        } else if stem.ends_with(&self.negative_suffix) {
            Some(0)
        } else {
            None
        }
    }
}

/// Per-class sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub negative: usize,
    pub positive: usize,
}

impl ClassCounts {
    pub fn new(negative: usize, positive: usize) -> Self {
        Self { negative, positive }
    }

    pub fn total(&self) -> usize {
        self.negative + self.positive
    }
}

pub fn class_counts(records: &[TbSampleRecord]) -> ClassCounts {
    let positive = records.iter().filter(|r| r.label == 1).count();
    ClassCounts::new(records.len() - positive, positive)
}

/// Scan `dir` for labelled images. Records come back sorted by image id.
pub fn load_tb_dataset(dir: &Path, labeling: &LabelingSpec, tag: DatasetTag) -> Result<Vec<TbSampleRecord>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::new();
    let mut unlabeled = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !path.is_file() || !labeling.extensions.iter().any(|x| x.eq_ignore_ascii_case(ext)) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            unlabeled.push(path.display().to_string());
            continue;
        };
        match labeling.label_of(stem) {
            Some(label) => records.push(TbSampleRecord {
                image_id: stem.to_string(),
                label,
                dataset_tag: tag,
                path: path.clone(),
            }),
            None => unlabeled.push(path.file_name().unwrap().to_string_lossy().into_owned()),
        }
    }
    if !unlabeled.is_empty() {
        unlabeled.sort();
        return Err(Error::UnlabeledFiles(unlabeled));
    }
    records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let counts = class_counts(&records);
    log::info!(
        "{tag}: {} images ({} negative, {} positive)",
        records.len(),
        counts.negative,
        counts.positive
    );
    Ok(records)
}

/// Stratified split with exact per-class counts.
///
/// `plan` lists the splits to fill, in order, with the number of negatives
/// and positives each should receive. Montgomery records are never placed in
/// a training or validation split: they all go to `external_test`. Samples
/// left over after the plan is satisfied are returned in the last tuple slot.
pub fn fixed_tb_split(
    records: &[TbSampleRecord],
    plan: &[(SplitName, ClassCounts)],
    seed: u64,
) -> Result<(Vec<SplitManifest>, Vec<String>)> {
    let (external, internal): (Vec<&TbSampleRecord>, Vec<&TbSampleRecord>) =
        records.iter().partition(|r| r.dataset_tag == DatasetTag::Montgomery);

    let mut pools: [Vec<&str>; 2] = Default::default();
    for r in &internal {
        pools[r.label as usize].push(&r.image_id);
    }
    for (class, pool) in pools.iter_mut().enumerate() {
        pool.sort_unstable();
        pool.shuffle(&mut rng_from(substream(seed, &format!("tb-class-{class}"))));
    }

    for class in 0..2u8 {
        let requested: usize = plan
            .iter()
            .map(|(_, c)| if class == 0 { c.negative } else { c.positive })
            .sum();
        let available = pools[class as usize].len();
        if requested > available {
            return Err(Error::InsufficientClass {
                class,
                requested,
                available,
            });
        }
    }

    let mut cursors = [0usize; 2];
    let mut manifests = Vec::new();
    for (name, counts) in plan {
        let mut entries = Vec::with_capacity(counts.total());
        for (class, n) in [(0usize, counts.negative), (1, counts.positive)] {
            let start = cursors[class];
            entries.extend(pools[class][start..start + n].iter().map(|s| s.to_string()));
            cursors[class] += n;
        }
        entries.sort();
        manifests.push(SplitManifest {
            split_name: *name,
            entries,
            patient_ids: BTreeSet::new(),
            seed,
        });
    }

    if !external.is_empty() {
        let mut entries: Vec<String> = external.iter().map(|r| r.image_id.clone()).collect();
        entries.sort();
        match manifests.iter_mut().find(|m| m.split_name == SplitName::ExternalTest) {
            Some(m) => {
                m.entries.extend(entries);
                m.entries.sort();
            }
            None => manifests.push(SplitManifest {
                split_name: SplitName::ExternalTest,
                entries,
                patient_ids: BTreeSet::new(),
                seed,
            }),
        }
    }

    let mut leftover: Vec<String> = (0..2)
        .flat_map(|c| pools[c][cursors[c]..].iter().map(|s| s.to_string()))
        .collect();
    leftover.sort();
    Ok((manifests, leftover))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: u8, tag: DatasetTag) -> TbSampleRecord {
        TbSampleRecord {
            image_id: id.into(),
            label,
            dataset_tag: tag,
            path: PathBuf::from(format!("{id}.png")),
        }
    }

    #[test]
    fn loads_suffix_labels_sorted() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b_1.png"), b"").unwrap();
        std::fs::write(dir.path().join("a_0.png"), b"").unwrap();
        std::fs::write(dir.path().join("notes.txt"), b"").unwrap();
        let recs = load_tb_dataset(dir.path(), &LabelingSpec::default(), DatasetTag::Shenzhen).unwrap();
        let got: Vec<(&str, u8)> = recs.iter().map(|r| (r.image_id.as_str(), r.label)).collect();
        assert_eq!(got, [("a_0", 0), ("b_1", 1)]);
    }

    #[test]
    fn unlabeled_files_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a_0.png"), b"").unwrap();
        std::fs::write(dir.path().join("mystery.png"), b"").unwrap();
        let err = load_tb_dataset(dir.path(), &LabelingSpec::default(), DatasetTag::Shenzhen).unwrap_err();
        assert!(err.to_string().contains("mystery.png"), "{err}");
    }

    #[test]
    fn one_of_each_class_per_split() {
        let recs = vec![
            rec("n1_0", 0, DatasetTag::Shenzhen),
            rec("n2_0", 0, DatasetTag::Shenzhen),
            rec("p1_1", 1, DatasetTag::Shenzhen),
            rec("p2_1", 1, DatasetTag::Shenzhen),
        ];
        let plan = [(SplitName::Train, ClassCounts::new(1, 1)), (SplitName::Test, ClassCounts::new(1, 1))];
        let (m, left) = fixed_tb_split(&recs, &plan, 3).unwrap();
        assert!(left.is_empty());
        for s in &m {
            assert_eq!(s.entries.len(), 2);
            assert_eq!(s.entries.iter().filter(|e| e.ends_with("_1")).count(), 1);
        }
        assert_eq!(fixed_tb_split(&recs, &plan, 3).unwrap().0, m);
    }

    #[test]
    fn shortfall_is_reported() {
        let recs = vec![rec("n1_0", 0, DatasetTag::Shenzhen), rec("p1_1", 1, DatasetTag::Shenzhen)];
        let err = fixed_tb_split(&recs, &[(SplitName::Train, ClassCounts::new(1, 3))], 0).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientClass {
                class: 1,
                requested: 3,
                available: 1
            }
        ));
        assert!(err.to_string().contains("short by 2"));
    }

    #[test]
    fn montgomery_only_in_external_test() {
        let mut recs = vec![rec("n1_0", 0, DatasetTag::Shenzhen), rec("p1_1", 1, DatasetTag::Shenzhen)];
        recs.push(rec("MC_0", 0, DatasetTag::Montgomery));
        recs.push(rec("MC_1", 1, DatasetTag::Montgomery));
        let (m, _) = fixed_tb_split(&recs, &[(SplitName::Train, ClassCounts::new(1, 1))], 0).unwrap();
        assert_eq!(m.len(), 2);
        assert!(!m[0].entries.iter().any(|e| e.starts_with("MC")));
        assert_eq!(m[1].split_name, SplitName::ExternalTest);
        assert_eq!(m[1].entries, ["MC_0", "MC_1"]);
    }
}
