use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::SampleRecord;
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
    ExternalTest,
}

impl SplitName {
    pub const PARTITION: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
            SplitName::ExternalTest => "external_test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "validation" => Ok(SplitName::Validation),
            "test" => Ok(SplitName::Test),
            "external_test" => Ok(SplitName::ExternalTest),
            other => Err(Error::Config(format!("unknown split name `{other}`"))),
        }
    }
}

/// The images (and, when known, the patients) assigned to one split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub split_name: SplitName,
    pub entries: Vec<String>,
    pub patient_ids: BTreeSet<String>,
    pub seed: u64,
}

impl SplitManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Line-oriented text form: a few `#` header lines, then one image id per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("# split: {}\n# seed: {}\n", self.split_name, self.seed);
        if !self.patient_ids.is_empty() {
            s.push_str("# patients:");
            for p in &self.patient_ids {
                s.push(' ');
                s.push_str(p);
            }
            s.push('\n');
        }
        for e in &self.entries {
            s.push_str(e);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut split_name = None;
        let mut seed = 0;
        let mut patient_ids = BTreeSet::new();
        let mut entries = Vec::new();
        for line in text.lines() {
            if let Some(header) = line.strip_prefix('#') {
                let (key, value) = header.split_once(':').unwrap_or((header, ""));
                match key.trim() {
                    "split" => split_name = Some(value.trim().parse()?),
                    "seed" => {
                        seed = value
                            .trim()
                            .parse()
                            .map_err(|_| Error::Config(format!("bad manifest seed `{}`", value.trim())))?
                    }
                    "patients" => patient_ids.extend(value.split_whitespace().map(str::to_string)),
                    _ => {}
                }
            } else if !line.trim().is_empty() {
                entries.push(line.trim().to_string());
            }
        }
        let split_name = split_name.ok_or_else(|| Error::Config("manifest has no `# split:` header".into()))?;
        Ok(Self {
            split_name,
            entries,
            patient_ids,
            seed,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Order-independent digest of the image ids, used to tie prediction
    /// files back to the manifest they were produced from.
    pub fn digest(&self) -> String {
        crate::digest_ids(self.entries.iter().map(String::as_str))
    }
}

/// Sidecar summary written next to a set of manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fractions: Option<[f64; 3]>,
    pub config_hash: String,
    pub splits: Vec<SplitSummaryEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unassigned: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummaryEntry {
    pub split: SplitName,
    pub images: usize,
    pub patients: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negatives: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positives: Option<usize>,
}

/// Assign whole patients to train/validation/test.
///
/// Patients are shuffled with `seed` and handed out greedily: each split
/// takes patients until its share of images is met or exceeded, and the last
/// split takes whatever remains. Every split receives at least one patient.
pub fn partition_by_patient(records: &[SampleRecord], fractions: [f64; 3], seed: u64) -> Result<[SplitManifest; 3]> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::Config(format!("split fractions must be positive, got {fractions:?}")));
    }
    let total_fraction: f64 = fractions.iter().sum();
    if (total_fraction - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!("split fractions must sum to 1, got {total_fraction}")));
    }

    let mut by_patient: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in records {
        by_patient.entry(&r.patient_id).or_default().push(&r.image_id);
    }
    if by_patient.len() < 3 {
        return Err(Error::TooFewPatients {
            needed: 3,
            found: by_patient.len(),
        });
    }

    let mut patients: Vec<(&str, Vec<&str>)> = by_patient.into_iter().collect();
    patients.shuffle(&mut rng_from(seed));

    let total = records.len() as f64;
    let targets = fractions.map(|f| f * total);
    let mut counts = [0usize; 3];
    let mut assigned: [Vec<(&str, Vec<&str>)>; 3] = Default::default();
    let mut k = 0;
    let n_patients = patients.len();
    for (i, patient) in patients.into_iter().enumerate() {
        let remaining = n_patients - i;
        while k < 2 && counts[k] > 0 && (counts[k] as f64 >= targets[k] || remaining <= 2 - k) {
            k += 1;
        }
        counts[k] += patient.1.len();
        assigned[k].push(patient);
    }

    let mut out = SplitName::PARTITION.map(|name| SplitManifest {
        split_name: name,
        entries: Vec::new(),
        patient_ids: BTreeSet::new(),
        seed,
    });
    for (manifest, patients) in out.iter_mut().zip(assigned) {
        for (pid, images) in patients {
            manifest.patient_ids.insert(pid.to_string());
            manifest.entries.extend(images.into_iter().map(str::to_string));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{DatasetTag, Gender, ViewPosition};
    use proptest::prelude::*;

    pub(crate) fn record(image: &str, patient: &str) -> SampleRecord {
        SampleRecord {
            image_id: image.into(),
            patient_id: patient.into(),
            pathology: [0; 14],
            gender: Gender::Female,
            position: ViewPosition::PA,
            age_years: 50.0,
            age_suspect: false,
            dataset_tag: DatasetTag::Chestxray14,
        }
    }

    #[test]
    fn three_patients_are_forced_one_per_split() {
        let recs = vec![record("a", "1"), record("b", "2"), record("c", "3")];
        for seed in 0..20 {
            let splits = partition_by_patient(&recs, [1.0 / 3.0; 3], seed).unwrap();
            for s in &splits {
                assert_eq!(s.entries.len(), 1);
                assert_eq!(s.patient_ids.len(), 1);
            }
        }
    }

    #[test]
    fn every_split_gets_a_patient_even_with_skewed_fractions() {
        let recs = vec![record("a", "1"), record("b", "2"), record("c", "3"), record("d", "3")];
        let splits = partition_by_patient(&recs, [0.98, 0.01, 0.01], 3).unwrap();
        assert!(splits.iter().all(|s| !s.is_empty()));
    }

    #[test]
    fn too_few_patients() {
        let recs = vec![record("a", "1"), record("b", "2"), record("c", "2")];
        assert!(matches!(
            partition_by_patient(&recs, [0.5, 0.25, 0.25], 0),
            Err(Error::TooFewPatients { needed: 3, found: 2 })
        ));
    }

    #[test]
    fn rejects_bad_fractions() {
        let recs = vec![record("a", "1"), record("b", "2"), record("c", "3")];
        assert!(partition_by_patient(&recs, [0.5, 0.5, 0.0], 0).is_err());
        assert!(partition_by_patient(&recs, [0.5, 0.5, 0.5], 0).is_err());
    }

    #[test]
    fn deterministic_for_a_seed() {
        let recs: Vec<_> = (0..50).map(|i| record(&format!("i{i}"), &format!("p{}", i / 3))).collect();
        let a = partition_by_patient(&recs, [0.7, 0.2, 0.1], 11).unwrap();
        let b = partition_by_patient(&recs, [0.7, 0.2, 0.1], 11).unwrap();
        assert_eq!(a, b);
        let c = partition_by_patient(&recs, [0.7, 0.2, 0.1], 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn manifest_without_patients_round_trips() {
        let m = SplitManifest {
            split_name: SplitName::ExternalTest,
            entries: vec!["MCUCXR_0001_0".into()],
            patient_ids: BTreeSet::new(),
            seed: 5,
        };
        assert_eq!(SplitManifest::from_text(&m.to_text()).unwrap(), m);
    }

    proptest! {
        #[test]
        fn manifest_text_round_trips(
            entries in prop::collection::vec("[A-Za-z0-9_.]{1,12}", 0..20),
            patients in prop::collection::btree_set("[0-9]{1,6}", 0..10),
            seed in any::<u64>(),
            split in 0usize..4,
        ) {
            let m = SplitManifest {
                split_name: [SplitName::Train, SplitName::Validation, SplitName::Test, SplitName::ExternalTest][split],
                entries,
                patient_ids: patients,
                seed,
            };
            prop_assert_eq!(SplitManifest::from_text(&m.to_text()).unwrap(), m);
        }

        #[test]
        fn partition_is_patient_disjoint_and_exhaustive(
            sizes in prop::collection::vec(1usize..6, 3..60),
            seed in any::<u64>(),
        ) {
            let mut recs = Vec::new();
            for (p, n) in sizes.iter().enumerate() {
                for j in 0..*n {
                    recs.push(record(&format!("{p}_{j}"), &p.to_string()));
                }
            }
            let splits = partition_by_patient(&recs, [0.6, 0.25, 0.15], seed).unwrap();
            let mut all: Vec<&String> = splits.iter().flat_map(|s| &s.entries).collect();
            all.sort();
            let mut expected: Vec<&String> = recs.iter().map(|r| &r.image_id).collect();
            expected.sort();
            prop_assert_eq!(all, expected);
            for i in 0..3 {
                for j in (i + 1)..3 {
                    prop_assert!(splits[i].patient_ids.is_disjoint(&splits[j].patient_ids));
                }
            }
        }
    }
}
