//! Small synthetic corpora with planted, learnable patterns, laid out like
//! the real datasets. Used by the tests, the examples in the guide and the
//! `synth` command.
//!
//! Every pattern is mirror-symmetric so horizontal flips preserve labels.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SampleRecord;
use crate::error::{Error, Result};
use crate::labels::{DatasetTag, Gender, ViewPosition, NO_FINDING, NUM_PATHOLOGIES, PATHOLOGIES};
use crate::preprocess::Image;
use crate::rng::{rng_from, substream};

const FIBROSIS: usize = 11;
const INFILTRATION: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub patients: usize,
    pub max_images_per_patient: usize,
    pub image_size: usize,
    /// Independent per-label prevalence.
    pub pathology_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            patients: 40,
            max_images_per_patient: 3,
            image_size: 32,
            pathology_rate: 0.2,
            seed: 7,
        }
    }
}

/// Appearance differences between acquisition sites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    pub background: f32,
    pub noise: f32,
    pub contrast: f32,
}

impl DomainShift {
    pub const NONE: DomainShift = DomainShift {
        background: 60.0,
        noise: 10.0,
        contrast: 1.0,
    };
    pub const DARK_NOISY: DomainShift = DomainShift {
        background: 90.0,
        noise: 20.0,
        contrast: 0.7,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TbSpec {
    pub negatives: usize,
    pub positives: usize,
    pub image_size: usize,
    pub seed: u64,
    pub shift: DomainShift,
}

/// Metadata only, no pixels. Patients are `P00001`…, images
/// `<patient>_<follow-up>.png`.
pub fn synthetic_records(spec: &SyntheticSpec) -> Vec<SampleRecord> {
    let mut rng = rng_from(substream(spec.seed, "metadata"));
    let mut out = Vec::new();
    for p in 1..=spec.patients {
        let patient_id = format!("P{p:05}");
        let gender = if rng.random_bool(0.5) { Gender::Male } else { Gender::Female };
        let base_age: f64 = rng.random_range(10..90) as f64;
        let n = rng.random_range(1..=spec.max_images_per_patient.max(1));
        for k in 0..n {
            let pathology: [u8; NUM_PATHOLOGIES] = std::array::from_fn(|_| u8::from(rng.random_bool(spec.pathology_rate)));
            out.push(SampleRecord {
                image_id: format!("{patient_id}_{k:03}.png"),
                patient_id: patient_id.clone(),
                pathology,
                gender,
                position: if rng.random_bool(0.5) { ViewPosition::PA } else { ViewPosition::AP },
                age_years: base_age + k as f64,
                age_suspect: false,
                dataset_tag: DatasetTag::Chestxray14,
            });
        }
    }
    out
}

fn canvas(size: usize, shift: DomainShift, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..size * size)
        .map(|_| shift.background + rng.random_range(-shift.noise..=shift.noise))
        .collect()
}

// Fills a rectangle and its horizontal mirror, in fractions of the side.
fn mirrored_patch(px: &mut [f32], size: usize, y0: f64, x0: f64, h: f64, w: f64, value: f32) {
    let s = size as f64;
    let (ya, yb) = ((y0 * s) as usize, (((y0 + h) * s).ceil() as usize).min(size));
    let (xa, xb) = ((x0 * s) as usize, (((x0 + w) * s).ceil() as usize).min(size));
    for y in ya..yb {
        for x in xa..xb {
            px[y * size + x] = value;
            px[y * size + (size - 1 - x)] = value;
        }
    }
}

// Label k sits in one of 7 rows × 2 columns of mirrored cells.
fn pathology_patch(px: &mut [f32], size: usize, k: usize, value: f32) {
    let row = (k / 2) as f64;
    let col = (k % 2) as f64;
    mirrored_patch(px, size, 0.04 + row * 0.12, 0.04 + col * 0.2, 0.08, 0.14, value);
}

fn to_image(size: usize, px: Vec<f32>) -> Image {
    Image::new(1, size, size, px.into_iter().map(|v| v.clamp(0.0, 255.0).round()).collect()).expect("sized canvas")
}

/// Renders one ChestXray14-style image: pathology cells, a brighter frame
/// for male patients, a bottom bar for AP views and a central stripe whose
/// brightness tracks age.
pub fn render_chestxray(rec: &SampleRecord, size: usize, seed: u64) -> Image {
    let mut rng = rng_from(substream(seed, &rec.image_id));
    let shift = DomainShift::NONE;
    let mut px = canvas(size, shift, &mut rng);
    for k in 0..NUM_PATHOLOGIES {
        if rec.pathology[k] == 1 {
            pathology_patch(&mut px, size, k, 220.0);
        }
    }
    if rec.gender == Gender::Male {
        mirrored_patch(&mut px, size, 0.0, 0.0, 1.0, 0.03, 240.0);
    }
    if rec.position == ViewPosition::AP {
        mirrored_patch(&mut px, size, 0.9, 0.0, 0.1, 0.5, 200.0);
    }
    let age = (rec.age_years / 100.0).clamp(0.0, 1.0) as f32;
    mirrored_patch(&mut px, size, 0.1, 0.45, 0.75, 0.06, 30.0 + 220.0 * age);
    to_image(size, px)
}

/// Renders a TB-dataset image. Positives carry bright upper-lobe blobs and
/// usually the Fibrosis and Infiltration cells; negatives rarely do.
pub fn render_tb(label: u8, size: usize, shift: DomainShift, rng: &mut ChaCha8Rng) -> Image {
    let mut px = canvas(size, shift, rng);
    let bright = shift.background + shift.contrast * 150.0;
    let co_rate = if label == 1 { 0.8 } else { 0.1 };
    for k in [FIBROSIS, INFILTRATION] {
        if rng.random_bool(co_rate) {
            pathology_patch(&mut px, size, k, bright);
        }
    }
    if label == 1 {
        mirrored_patch(&mut px, size, 0.15, 0.15, 0.2, 0.2, bright);
    }
    to_image(size, px)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `<dir>/metadata.csv` (public ChestXray14 column names) and
/// `<dir>/images/*.png`.
pub fn write_chestxray14(dir: &Path, spec: &SyntheticSpec) -> Result<Vec<SampleRecord>> {
    let records = synthetic_records(spec);
    let images = dir.join("images");
    create_dir(&images)?;
    let mut csv = String::from("Image Index,Finding Labels,Follow-up #,Patient ID,Patient Age,Patient Gender,View Position\n");
    for r in &records {
        let findings: Vec<&str> = (0..NUM_PATHOLOGIES).filter(|&k| r.pathology[k] == 1).map(|k| PATHOLOGIES[k]).collect();
        let findings = if findings.is_empty() { NO_FINDING.to_string() } else { findings.join("|") };
        let follow_up = r.image_id.rsplit('_').next().and_then(|s| s.strip_suffix(".png")).unwrap_or("0");
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.image_id,
            findings,
            follow_up.parse::<u32>().unwrap_or(0),
            r.patient_id,
            r.age_years,
            r.gender,
            r.position
        );
        render_chestxray(r, spec.image_size, spec.seed).save_png(&images.join(&r.image_id))?;
    }
    let path = dir.join("metadata.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(records)
}

/// Writes `<dir>/<prefix>_<nnnn>_<label>.png`.
pub fn write_tb_dir(dir: &Path, prefix: &str, spec: &TbSpec) -> Result<()> {
    create_dir(dir)?;
    let mut rng = rng_from(substream(spec.seed, prefix));
    let labels = std::iter::repeat_n(0u8, spec.negatives).chain(std::iter::repeat_n(1u8, spec.positives));
    for (i, label) in labels.enumerate() {
        let path = dir.join(format!("{prefix}_{:04}_{label}.png", i + 1));
        render_tb(label, spec.image_size, spec.shift, &mut rng).save_png(&path)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusPaths {
    pub chestxray14: PathBuf,
    pub metadata: PathBuf,
    pub images: PathBuf,
    pub shenzhen: PathBuf,
    pub montgomery: PathBuf,
}

/// The full desk-scale corpus: ChestXray14-style data plus Shenzhen- and
/// Montgomery-style TB folders, the latter with a domain shift.
pub fn write_corpus(root: &Path, spec: &SyntheticSpec, shenzhen: (usize, usize), montgomery: (usize, usize)) -> Result<CorpusPaths> {
    let paths = CorpusPaths {
        chestxray14: root.join("chestxray14"),
        metadata: root.join("chestxray14/metadata.csv"),
        images: root.join("chestxray14/images"),
        shenzhen: root.join("shenzhen"),
        montgomery: root.join("montgomery"),
    };
    write_chestxray14(&paths.chestxray14, spec)?;
    let tb = |(negatives, positives), shift| TbSpec {
        negatives,
        positives,
        image_size: spec.image_size,
        seed: spec.seed,
        shift,
    };
    write_tb_dir(&paths.shenzhen, "CHNCXR", &tb(shenzhen, DomainShift::NONE))?;
    write_tb_dir(&paths.montgomery, "MCUCXR", &tb(montgomery, DomainShift::DARK_NOISY))?;
    Ok(paths)
}
