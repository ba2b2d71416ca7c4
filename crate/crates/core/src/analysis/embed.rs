use std::fmt::Write as _;
use std::io::Read;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use super::tsne::Projector;
use crate::data::{ImageSource, SampleRecord};
use crate::error::{Error, Result};
use crate::labels::{Gender, ViewPosition};
use crate::model::{images_to_tensor, Model};
use crate::preprocess::{preprocess_image, PreprocessConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub image_id: String,
    pub gender: Gender,
    pub position: ViewPosition,
    pub age_years: f64,
    pub features: Vec<f64>,
    pub xy: Option<[f64; 2]>,
}

/// Backbone features with their sidecar labels, optionally projected to 2-d.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EmbeddingExport {
    pub feature_dim: usize,
    pub rows: Vec<EmbeddingRow>,
}

/// An image that could not be embedded; the export carries on without it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportFailure {
    pub image_id: String,
    pub error: String,
}

impl EmbeddingExport {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_projected(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.xy.is_some())
    }

    /// Columns `image_id,gender,position,age_years,f_1..f_D[,x,y]`. Lines
    /// starting with `#` in `comment` are written verbatim above the header.
    pub fn to_csv(&self, comment: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(c) = comment {
            for line in c.lines() {
                let _ = writeln!(s, "# {line}");
            }
        }
        s.push_str("image_id,gender,position,age_years");
        for k in 1..=self.feature_dim {
            let _ = write!(s, ",f_{k}");
        }
        let projected = self.is_projected();
        if projected {
            s.push_str(",x,y");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{},{},{}", r.image_id, r.gender, r.position, r.age_years);
            for v in &r.features {
                let _ = write!(s, ",{v}");
            }
            if let (true, Some([x, y])) = (projected, r.xy) {
                let _ = write!(s, ",{x},{y}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let headers = rdr.headers()?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols.len() < 4 || cols[..4] != ["image_id", "gender", "position", "age_years"] {
            return Err(Error::MissingColumn("image_id,gender,position,age_years".into()));
        }
        let projected = cols.ends_with(&["x", "y"]);
        let feature_dim = cols.len() - 4 - if projected { 2 } else { 0 };
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let row_err = |m: String| Error::Row { row: line, message: m };
            let num = |j: usize| -> Result<f64> {
                rec.get(j)
                    .unwrap_or_default()
                    .parse::<f64>()
                    .map_err(|e| row_err(format!("column {}: {e}", cols[j])))
            };
            let features = (4..4 + feature_dim).map(num).collect::<Result<Vec<_>>>()?;
            let xy = if projected {
                Some([num(4 + feature_dim)?, num(5 + feature_dim)?])
            } else {
                None
            };
            rows.push(EmbeddingRow {
                image_id: rec[0].to_string(),
                gender: rec[1].parse().map_err(row_err)?,
                position: rec[2].parse().map_err(row_err)?,
                age_years: num(3)?,
                features,
                xy,
            });
        }
        Ok(Self { feature_dim, rows })
    }
}

/// Runs the backbone in inference mode over `records`. Images that fail to
/// load are reported and skipped.
pub fn export_embeddings(
    model: &Model,
    records: &[&SampleRecord],
    images: &dyn ImageSource,
    preprocess: &PreprocessConfig,
    batch_size: usize,
) -> Result<(EmbeddingExport, Vec<ExportFailure>)> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut export = EmbeddingExport {
        feature_dim: model.feature_dim(),
        rows: Vec::with_capacity(records.len()),
    };
    let mut failures = Vec::new();
    for chunk in records.chunks(batch_size) {
        let mut ok = Vec::with_capacity(chunk.len());
        let mut tensors = Vec::with_capacity(chunk.len());
        for rec in chunk {
            match images.load(&rec.image_id).and_then(|img| preprocess_image(&img, preprocess)) {
                Ok(img) => {
                    ok.push(*rec);
                    tensors.push(img);
                }
                Err(e) => failures.push(ExportFailure {
                    image_id: rec.image_id.clone(),
                    error: e.to_string(),
                }),
            }
        }
        if ok.is_empty() {
            continue;
        }
        let feats = model
            .features(&images_to_tensor(&tensors)?, false)?
            .to_dtype(DType::F64)?
            .to_vec2::<f64>()?;
        for (rec, f) in ok.into_iter().zip(feats) {
            export.rows.push(EmbeddingRow {
                image_id: rec.image_id.clone(),
                gender: rec.gender,
                position: rec.position,
                age_years: rec.age_years,
                features: f,
                xy: None,
            });
        }
    }
    Ok((export, failures))
}

/// Fills in the 2-d coordinates of every row.
pub fn project_embeddings(export: &mut EmbeddingExport, projector: &dyn Projector, seed: u64) -> Result<()> {
    let points: Vec<Vec<f64>> = export.rows.iter().map(|r| r.features.clone()).collect();
    if points.iter().any(|p| p.len() != export.feature_dim) {
        return Err(Error::Shape(format!("feature vectors must all have width {}", export.feature_dim)));
    }
    let xy = projector.project(&points, seed)?;
    if xy.len() != export.rows.len() {
        return Err(Error::Shape(format!("{} projected points for {} rows", xy.len(), export.rows.len())));
    }
    for (row, p) in export.rows.iter_mut().zip(xy) {
        row.xy = Some(p);
    }
    Ok(())
}
