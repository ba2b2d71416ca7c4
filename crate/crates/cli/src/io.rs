use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use metachex::data::{
    load_tb_dataset, read_chestxray14_metadata, DirImageSource, ImageSource, SampleRecord, SplitManifest, TbSampleRecord,
};
use metachex::labels::{DatasetTag, NUM_PATHOLOGIES, PATHOLOGIES};
use metachex::model::{PredictionRecord, Variant};
use metachex::preprocess::{unscale_age, Image, PreprocessConfig};
use sha2::{Digest, Sha256};

use crate::config::Loaded;
use crate::error::{CliError, Result};

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Manifest text with the producing configuration's hash on top.
pub fn write_manifest(path: &Path, manifest: &SplitManifest, config_hash: &str) -> Result<()> {
    write_file(path, format!("# config_hash: {config_hash}\n{}", manifest.to_text()))
}

pub fn read_manifest(path: &Path) -> Result<SplitManifest> {
    if !path.exists() {
        return Err(CliError::Config(format!(
            "manifest {} not found (run `metachex prepare` first)",
            path.display()
        )));
    }
    Ok(SplitManifest::read(path)?)
}

/// Every labelled image the configuration points at: ChestXray14-style
/// metadata and the TB folders. Doubles as the image source for all of them.
pub struct Datasets {
    pub cxr: HashMap<String, SampleRecord>,
    pub tb: HashMap<String, TbSampleRecord>,
    images: Option<DirImageSource>,
}

impl Datasets {
    pub fn load(l: &Loaded) -> Result<Self> {
        let data = &l.config.data;
        let mut cxr = HashMap::new();
        if let Some(p) = &data.metadata {
            for r in read_chestxray14_metadata(&l.data_path(p)?, &data.columns)? {
                cxr.insert(r.image_id.clone(), r);
            }
        }
        let images = data.images.as_ref().map(|p| l.data_path(p)).transpose()?.map(DirImageSource::new);
        let mut tb = HashMap::new();
        for (dir, tag) in [(&data.shenzhen, DatasetTag::Shenzhen), (&data.montgomery, DatasetTag::Montgomery)] {
            if let Some(p) = dir {
                for r in load_tb_dataset(&l.data_path(p)?, &data.labeling, tag)? {
                    tb.insert(r.image_id.clone(), r);
                }
            }
        }
        Ok(Self { cxr, tb, images })
    }

    pub fn cxr_records(&self, ids: &[String]) -> Result<Vec<&SampleRecord>> {
        ids.iter()
            .map(|id| {
                self.cxr
                    .get(id)
                    .ok_or_else(|| CliError::Mismatch(format!("image `{id}` has no row in the metadata")))
            })
            .collect()
    }

    pub fn tb_records(&self, ids: &[String]) -> Result<Vec<&TbSampleRecord>> {
        ids.iter()
            .map(|id| {
                self.tb
                    .get(id)
                    .ok_or_else(|| CliError::Mismatch(format!("image `{id}` is not in the TB datasets")))
            })
            .collect()
    }

    pub fn tb_label(&self, id: &str) -> Result<u8> {
        Ok(self.tb_records(&[id.to_string()])?[0].label)
    }
}

impl ImageSource for Datasets {
    fn load(&self, image_id: &str) -> metachex::Result<Image> {
        if let Some(r) = self.tb.get(image_id) {
            return Image::load(&r.path);
        }
        match &self.images {
            Some(src) => src.load(image_id),
            None => Err(metachex::Error::Config(format!("no image directory configured for `{image_id}`"))),
        }
    }
}

/// A prediction table with its provenance header.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFile {
    pub config_hash: String,
    pub variant: Variant,
    pub checkpoint_digest: String,
    pub manifest_split: String,
    pub manifest_digest: String,
    pub records: Vec<PredictionRecord>,
}

fn columns(variant: Variant) -> Vec<(String, &'static str)> {
    let mut cols = Vec::new();
    if variant != Variant::Tb {
        cols.extend(PATHOLOGIES.iter().map(|p| (p.to_string(), "pathology probability")));
    }
    if variant == Variant::Metachexnet {
        cols.push(("gender_prob".into(), "P(male)"));
        cols.push(("position_prob".into(), "P(PA view)"));
        cols.push(("age_scaled".into(), "age / age_scale_max"));
        cols.push(("age_years".into(), "predicted age in years"));
    }
    if variant == Variant::Tb {
        cols.push(("tb_prob".into(), "P(tuberculosis)"));
    }
    cols
}

impl PredictionFile {
    pub fn to_csv(&self, preprocess: &PreprocessConfig) -> String {
        let cols = columns(self.variant);
        let mut s = String::from("# metachex predictions\n");
        let _ = writeln!(s, "# config_hash: {}", self.config_hash);
        let _ = writeln!(s, "# variant: {}", self.variant);
        let _ = writeln!(s, "# checkpoint_digest: {}", self.checkpoint_digest);
        let _ = writeln!(s, "# manifest: {}", self.manifest_split);
        let _ = writeln!(s, "# manifest_digest: {}", self.manifest_digest);
        let described: Vec<String> = cols.iter().map(|(c, d)| format!("{c} = {d}")).collect();
        let _ = writeln!(s, "# columns: image_id; {}", described.join("; "));
        s.push_str("image_id");
        for (c, _) in &cols {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for r in &self.records {
            s.push_str(&r.image_id);
            let mut push = |v: f64| {
                let _ = write!(s, ",{v}");
            };
            if let Some(p) = &r.pathology_probs {
                p.iter().for_each(|&v| push(v));
            }
            if self.variant == Variant::Metachexnet {
                push(r.gender_prob.unwrap_or(f64::NAN));
                push(r.position_prob.unwrap_or(f64::NAN));
                let age = r.age_scaled.unwrap_or(f64::NAN);
                push(age);
                push(unscale_age(age, preprocess));
            }
            if let Some(t) = r.tb_prob {
                push(t);
            }
            s.push('\n');
        }
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let fail = |message: String| CliError::Format {
            path: path.to_path_buf(),
            message,
        };
        let mut header: HashMap<&str, &str> = HashMap::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some((k, v)) = line[1..].split_once(':') {
                header.insert(k.trim(), v.trim());
            }
        }
        let field = |k: &str| {
            header
                .get(k)
                .map(|v| v.to_string())
                .ok_or_else(|| fail(format!("missing `# {k}:` header")))
        };
        let variant: Variant = field("variant")?.parse().map_err(|e: metachex::Error| fail(e.to_string()))?;
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let expected: Vec<String> = std::iter::once("image_id".to_string())
            .chain(columns(variant).into_iter().map(|(c, _)| c))
            .collect();
        let got: Vec<String> = rdr.headers().map_err(|e| fail(e.to_string()))?.iter().map(str::to_string).collect();
        if got != expected {
            return Err(fail(format!("columns {got:?} do not match variant {variant}")));
        }
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| fail(e.to_string()))?;
            let num = |j: usize| -> Result<f64> {
                row[j]
                    .parse::<f64>()
                    .map_err(|e| fail(format!("data row {}: column {}: {e}", i + 1, expected[j])))
            };
            let mut rec = PredictionRecord {
                image_id: row[0].to_string(),
                pathology_probs: None,
                gender_prob: None,
                position_prob: None,
                age_scaled: None,
                tb_prob: None,
            };
            let mut j = 1;
            if variant != Variant::Tb {
                let mut p = [0.0; NUM_PATHOLOGIES];
                for v in p.iter_mut() {
                    *v = num(j)?;
                    j += 1;
                }
                rec.pathology_probs = Some(p);
            }
            if variant == Variant::Metachexnet {
                rec.gender_prob = Some(num(j)?);
                rec.position_prob = Some(num(j + 1)?);
                rec.age_scaled = Some(num(j + 2)?);
            }
            if variant == Variant::Tb {
                rec.tb_prob = Some(num(j)?);
            }
            records.push(rec);
        }
        Ok(Self {
            config_hash: field("config_hash")?,
            variant,
            checkpoint_digest: field("checkpoint_digest")?,
            manifest_split: field("manifest")?,
            manifest_digest: field("manifest_digest")?,
            records,
        })
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.image_id.clone()).collect()
    }
}

/// Inserts an XML comment carrying the configuration hash right after the
/// SVG prolog.
pub fn stamp_svg(svg: &str, config_hash: &str) -> String {
    let comment = format!("<!-- metachex config_hash: {config_hash} -->\n");
    match svg.find("<svg") {
        Some(i) => format!("{}{comment}{}", &svg[..i], &svg[i..]),
        None => format!("{comment}{svg}"),
    }
}

pub fn default_path(l: &Loaded, explicit: Option<PathBuf>, rel: &str) -> PathBuf {
    explicit.unwrap_or_else(|| l.output_dir().join(rel))
}
