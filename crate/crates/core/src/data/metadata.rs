use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{pathology_index, DatasetTag, Gender, ViewPosition, NO_FINDING, NUM_PATHOLOGIES};

/// Ages above this are almost certainly labelling errors (the source data
/// contains ages such as 155 years).
pub const SUSPECT_AGE_YEARS: f64 = 110.0;

/// One radiograph and its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image_id: String,
    pub patient_id: String,
    pub pathology: [u8; NUM_PATHOLOGIES],
    pub gender: Gender,
    pub position: ViewPosition,
    pub age_years: f64,
    pub age_suspect: bool,
    pub dataset_tag: DatasetTag,
}

impl SampleRecord {
    pub fn pathology_targets(&self) -> [f64; NUM_PATHOLOGIES] {
        self.pathology.map(f64::from)
    }
}

/// Column names of the metadata file. The defaults are the ones used by the
/// public ChestXray14 distribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub image_id: String,
    pub findings: String,
    pub patient_id: String,
    pub age: String,
    pub gender: String,
    pub position: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            image_id: "Image Index".into(),
            findings: "Finding Labels".into(),
            patient_id: "Patient ID".into(),
            age: "Patient Age".into(),
            gender: "Patient Gender".into(),
            position: "View Position".into(),
        }
    }
}

pub fn read_chestxray14_metadata(path: &Path, columns: &ColumnMap) -> Result<Vec<SampleRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_chestxray14_metadata(file, columns)
}

/// Parse a comma-separated metadata file into one record per row.
///
/// Row numbers in errors are 1-based file line numbers (the header is line 1).
pub fn parse_chestxray14_metadata<R: Read>(input: R, columns: &ColumnMap) -> Result<Vec<SampleRecord>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let c_image = find(&columns.image_id)?;
    let c_findings = find(&columns.findings)?;
    let c_patient = find(&columns.patient_id)?;
    let c_age = find(&columns.age)?;
    let c_gender = find(&columns.gender)?;
    let c_position = find(&columns.position)?;

    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row?;
        let field = |c: usize| {
            row.get(c).map(str::trim).ok_or_else(|| Error::Row {
                row: line,
                message: format!("missing field {}", headers.get(c).unwrap_or("?")),
            })
        };
        let row_err = |message: String| Error::Row { row: line, message };

        let mut pathology = [0u8; NUM_PATHOLOGIES];
        let findings = field(c_findings)?;
        if findings != NO_FINDING {
            for name in findings.split('|').filter(|s| !s.trim().is_empty()) {
                let idx = pathology_index(name).ok_or_else(|| row_err(format!("unknown pathology `{}`", name.trim())))?;
                pathology[idx] = 1;
            }
        }

        let age_years = parse_age(field(c_age)?).ok_or_else(|| row_err(format!("unparsable age `{}`", field(c_age).unwrap_or(""))))?;
        let gender = field(c_gender)?.parse::<Gender>().map_err(row_err)?;
        let position = field(c_position)?.parse::<ViewPosition>().map_err(row_err)?;

        out.push(SampleRecord {
            image_id: field(c_image)?.to_string(),
            patient_id: field(c_patient)?.to_string(),
            pathology,
            gender,
            position,
            age_years,
            age_suspect: age_years > SUSPECT_AGE_YEARS,
            dataset_tag: DatasetTag::Chestxray14,
        });
    }
    Ok(out)
}

// Accepts "58", "58.0" and the older "058Y" spelling.
fn parse_age(s: &str) -> Option<f64> {
    let s = s.strip_suffix(['Y', 'y']).unwrap_or(s);
    let age: f64 = s.trim().parse().ok()?;
    (age.is_finite() && age >= 0.0).then_some(age)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::PATHOLOGIES;

    const HEADER: &str = "Image Index,Finding Labels,Follow-up #,Patient ID,Patient Age,Patient Gender,View Position\n";

    fn parse(body: &str) -> Result<Vec<SampleRecord>> {
        parse_chestxray14_metadata(format!("{HEADER}{body}").as_bytes(), &ColumnMap::default())
    }

    #[test]
    fn no_finding_is_all_zero() {
        let r = parse("00000001_000.png,No Finding,0,1,58,M,PA\n").unwrap();
        assert_eq!(r[0].pathology, [0; 14]);
        assert_eq!(r[0].gender, Gender::Male);
        assert_eq!(r[0].position, ViewPosition::PA);
        assert!(!r[0].age_suspect);
    }

    #[test]
    fn multi_label_row_sets_exactly_those_positions() {
        let r = parse("x.png,Cardiomegaly|Effusion,0,2,40,F,AP\n").unwrap();
        let on: Vec<&str> = (0..14).filter(|&i| r[0].pathology[i] == 1).map(|i| PATHOLOGIES[i]).collect();
        assert_eq!(on, ["Cardiomegaly", "Effusion"]);
        assert_eq!(r[0].pathology.iter().map(|&v| v as u32).sum::<u32>(), 2);
    }

    #[test]
    fn anomalous_age_is_flagged_not_dropped() {
        let r = parse("00027989_000.png,No Finding,0,27989,155,F,PA\n").unwrap();
        assert_eq!(r[0].age_years, 155.0);
        assert!(r[0].age_suspect);
    }

    #[test]
    fn old_age_format() {
        let r = parse("a.png,No Finding,0,3,058Y,F,PA\n").unwrap();
        assert_eq!(r[0].age_years, 58.0);
    }

    #[test]
    fn missing_column_is_named() {
        let err = parse_chestxray14_metadata("Image Index,Finding Labels\n".as_bytes(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "Patient ID"), "{err}");
    }

    #[test]
    fn row_errors_carry_line_numbers() {
        let err = parse("a.png,No Finding,0,1,58,M,PA\nb.png,No Finding,0,1,abc,M,PA\n").unwrap_err();
        assert!(matches!(err, Error::Row { row: 3, .. }), "{err}");
        let err = parse("a.png,No Finding,0,1,58,M,LL\n").unwrap_err();
        assert!(matches!(err, Error::Row { row: 2, .. }), "{err}");
        let err = parse("a.png,Tuberculosis,0,1,58,M,PA\n").unwrap_err();
        assert!(err.to_string().contains("unknown pathology"));
    }

    #[test]
    fn custom_column_mapping() {
        let cols = ColumnMap {
            image_id: "file".into(),
            findings: "labels".into(),
            patient_id: "pid".into(),
            age: "age".into(),
            gender: "sex".into(),
            position: "view".into(),
        };
        let r = parse_chestxray14_metadata("pid,file,labels,age,sex,view\n9,z.png,Hernia,70,F,AP\n".as_bytes(), &cols).unwrap();
        assert_eq!(r[0].patient_id, "9");
        assert_eq!(r[0].pathology[13], 1);
    }
}
