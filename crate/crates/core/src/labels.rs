//! Label universe shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of pathology labels predicted by the classification head.
pub const NUM_PATHOLOGIES: usize = 14;

/// Pathology names in canonical order. Every 14-vector in this crate
/// (labels, probabilities, regression coefficients) is indexed by it.
pub const PATHOLOGIES: [&str; NUM_PATHOLOGIES] = [
    "Atelectasis",
    "Cardiomegaly",
    "Effusion",
    "Infiltration",
    "Mass",
    "Nodule",
    "Pneumonia",
    "Pneumothorax",
    "Consolidation",
    "Edema",
    "Emphysema",
    "Fibrosis",
    "Pleural_Thickening",
    "Hernia",
];

/// Literal used by the metadata file for an image with no positive finding.
pub const NO_FINDING: &str = "No Finding";

/// Position of `name` in [`PATHOLOGIES`]. Hyphen and underscore spellings of
/// "Pleural-Thickening" are both accepted.
pub fn pathology_index(name: &str) -> Option<usize> {
    let name = name.trim();
    PATHOLOGIES
        .iter()
        .position(|p| p.eq_ignore_ascii_case(name) || p.replace('_', "-").eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    /// Binary target used by the metadata head: Male = 1.
    pub fn target(self) -> f64 {
        match self {
            Gender::Female => 0.0,
            Gender::Male => 1.0,
        }
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "F" | "f" | "Female" | "female" => Ok(Gender::Female),
            "M" | "m" | "Male" | "male" => Ok(Gender::Male),
            other => Err(format!("unknown gender `{other}`")),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "F",
            Gender::Male => "M",
        })
    }
}

/// X-ray beam direction relative to the patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViewPosition {
    /// Anteroposterior.
    AP,
    /// Posteroanterior.
    PA,
}

impl ViewPosition {
    /// Binary target used by the metadata head: PA = 1.
    pub fn target(self) -> f64 {
        match self {
            ViewPosition::AP => 0.0,
            ViewPosition::PA => 1.0,
        }
    }
}

impl FromStr for ViewPosition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "AP" | "ap" => Ok(ViewPosition::AP),
            "PA" | "pa" => Ok(ViewPosition::PA),
            other => Err(format!("unknown view position `{other}`")),
        }
    }
}

impl fmt::Display for ViewPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViewPosition::AP => "AP",
            ViewPosition::PA => "PA",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetTag {
    Chestxray14,
    Shenzhen,
    Montgomery,
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetTag::Chestxray14 => "chestxray14",
            DatasetTag::Shenzhen => "shenzhen",
            DatasetTag::Montgomery => "montgomery",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pathology_lookup_accepts_both_thickening_spellings() {
        assert_eq!(pathology_index("Pleural_Thickening"), Some(12));
        assert_eq!(pathology_index("Pleural-Thickening"), Some(12));
        assert_eq!(pathology_index("Atelectasis"), Some(0));
        assert_eq!(pathology_index("Hernia"), Some(13));
        assert_eq!(pathology_index("Tuberculosis"), None);
    }

    #[test]
    fn metadata_targets() {
        assert_eq!("M".parse::<Gender>().unwrap().target(), 1.0);
        assert_eq!("PA".parse::<ViewPosition>().unwrap().target(), 1.0);
        assert!("LL".parse::<ViewPosition>().is_err());
    }
}
