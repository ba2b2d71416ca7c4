use std::path::{Path, PathBuf};

use metachex::analysis::TsneConfig;
use metachex::data::{ColumnMap, LabelingSpec};
use metachex::model::{BackboneConfig, Variant};
use metachex::preprocess::{AugmentConfig, PreprocessConfig};
use metachex::training::{LossConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Relative data paths are resolved against this directory when it is set.
pub const DATA_ROOT_ENV: &str = "METACHEX_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// ChestXray14-style metadata table.
    pub metadata: Option<PathBuf>,
    /// Directory holding the images named in `metadata`.
    pub images: Option<PathBuf>,
    pub shenzhen: Option<PathBuf>,
    pub montgomery: Option<PathBuf>,
    pub columns: ColumnMap,
    pub labeling: LabelingSpec,
}

/// TB counts are `[negatives, positives]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub fractions: [f64; 3],
    pub tb_train: [usize; 2],
    pub tb_validation: [usize; 2],
    pub tb_test: [usize; 2],
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            fractions: [0.92, 0.055, 0.025],
            tb_train: [226, 236],
            tb_validation: [50, 50],
            tb_test: [50, 50],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub backbone: BackboneConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Metachexnet,
            backbone: BackboneConfig::densenet121(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub phase1: AugmentConfig,
    pub phase2: AugmentConfig,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self {
            phase1: AugmentConfig::phase1(),
            phase2: AugmentConfig::phase2(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub phase1: TrainConfig,
    pub phase2: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Penalty on the logistic-regression coefficients (not the intercept).
    pub l2_strength: f64,
    pub tsne: TsneConfig,
    /// Inference batch size for `predict` and `analyze`.
    pub batch_size: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            l2_strength: 1.0,
            tsne: TsneConfig::default(),
            batch_size: 32,
        }
    }
}

/// A parsed configuration together with where it came from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub hash: String,
    base_dir: PathBuf,
    data_root: Option<PathBuf>,
}

/// Applies `key.path=value` overrides; `value` is parsed as a TOML value
/// and falls back to a plain string.
fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not of the form key=value")))?;
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl Loaded {
    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, overrides, base, path)
    }

    fn from_str(text: &str, overrides: &[String], base_dir: PathBuf, origin: &Path) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|source| CliError::Toml {
            path: origin.to_path_buf(),
            source,
        })?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = toml::Value::Table(table).try_into().map_err(|source| CliError::Toml {
            path: origin.to_path_buf(),
            source,
        })?;
        config.validate()?;
        let hash = config.hash()?;
        Ok(Self {
            config,
            hash,
            base_dir,
            data_root: std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from),
        })
    }

    /// Resolves a configured data path and checks that it exists.
    pub fn data_path(&self, p: &Path) -> Result<PathBuf> {
        let resolved = if p.is_absolute() {
            p.to_path_buf()
        } else if let Some(root) = &self.data_root {
            root.join(p)
        } else {
            self.base_dir.join(p)
        };
        if !resolved.exists() {
            return Err(CliError::Config(format!("data path {} does not exist", resolved.display())));
        }
        Ok(resolved)
    }

    pub fn output_dir(&self) -> PathBuf {
        if self.config.output_dir.is_absolute() {
            self.config.output_dir.clone()
        } else {
            self.base_dir.join(&self.config.output_dir)
        }
    }

    pub fn splits_dir(&self) -> PathBuf {
        self.output_dir().join("splits")
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.augment.phase1.validate()?;
        self.augment.phase2.validate()?;
        self.loss.validate()?;
        self.train.phase1.validate()?;
        self.train.phase2.validate()?;
        self.model.backbone.validate()?;
        if self.analysis.batch_size == 0 {
            return Err(CliError::Config("analysis.batch_size must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }
}
