//! Versioned single-file checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic       8 bytes   "MCXCKPT\0"
//! version     u32
//! manifest    u64 length + JSON
//! tensors     u64 length + safetensors blob
//! digest      32 bytes  SHA-256 of everything above
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::Device;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{attach_heads, build_backbone, BackboneConfig, Model, PretrainedSource, Variant};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MCXCKPT\0";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub variant: Variant,
    pub backbone: BackboneConfig,
    pub feature_dim: usize,
    pub config_hash: String,
    #[serde(default)]
    pub phase: Option<u8>,
    #[serde(default)]
    pub epoch: Option<usize>,
    #[serde(default)]
    pub metric_name: Option<String>,
    #[serde(default)]
    pub metric_value: Option<f64>,
}

impl CheckpointManifest {
    pub fn for_model(model: &Model, config_hash: impl Into<String>) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            variant: model.variant(),
            backbone: model.spec().backbone,
            feature_dim: model.feature_dim(),
            config_hash: config_hash.into(),
            phase: None,
            epoch: None,
            metric_name: None,
            metric_value: None,
        }
    }
}

fn encode(model: &Model, manifest: &CheckpointManifest) -> Result<Vec<u8>> {
    let tensors: BTreeMap<String, candle_core::Tensor> = model.snapshot()?;
    let blob = safetensors::tensor::serialize(tensors.iter().map(|(k, v)| (k.as_str(), v)), None)
        .map_err(|e| Error::Integrity(format!("serializing tensors: {e}")))?;
    let json = serde_json::to_vec(manifest)?;

    let mut out = Vec::with_capacity(blob.len() + json.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
    out.extend_from_slice(&blob);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn save_checkpoint(model: &Model, manifest: &CheckpointManifest, path: &Path) -> Result<()> {
    if manifest.variant != model.variant() {
        return Err(Error::VariantMismatch {
            expected: model.variant().to_string(),
            found: manifest.variant.to_string(),
        });
    }
    let bytes = encode(model, manifest)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Integrity("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Read the manifest and tensors, verifying the digest.
fn decode(bytes: &[u8]) -> Result<(CheckpointManifest, BTreeMap<String, candle_core::Tensor>)> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
        return Err(Error::Integrity("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Integrity("digest mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Integrity(format!("unsupported checkpoint version {version}")));
    }
    let json_len = r.u64()? as usize;
    let manifest: CheckpointManifest = serde_json::from_slice(r.take(json_len)?)?;
    let blob_len = r.u64()? as usize;
    let tensors = candle_core::safetensors::load_buffer(r.take(blob_len)?, &Device::Cpu)?;
    Ok((manifest, tensors.into_iter().collect()))
}

pub fn read_manifest(path: &Path) -> Result<CheckpointManifest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?.0)
}

/// Load a checkpoint. When `expected` is given, a checkpoint of another
/// variant is refused.
pub fn load_checkpoint(path: &Path, expected: Option<Variant>) -> Result<(Model, CheckpointManifest)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (manifest, tensors) = decode(&bytes)?;
    if let Some(expected) = expected {
        if expected != manifest.variant {
            return Err(Error::VariantMismatch {
                expected: expected.to_string(),
                found: manifest.variant.to_string(),
            });
        }
    }
    let mut cfg = manifest.backbone.clone();
    cfg.pretrained_source = PretrainedSource::Random;
    let mut extractor = build_backbone(&cfg, 0)?;
    if extractor.feature_dim() != manifest.feature_dim {
        return Err(Error::Shape(format!(
            "checkpoint declares {} features, backbone produces {}",
            manifest.feature_dim,
            extractor.feature_dim()
        )));
    }
    extractor.config = manifest.backbone.clone();
    let model = attach_heads(extractor, manifest.variant, 0)?;
    let expected_names: Vec<String> = model.snapshot()?.into_keys().collect();
    if let Some(extra) = tensors.keys().find(|k| !expected_names.contains(k)) {
        return Err(Error::Integrity(format!("unexpected tensor `{extra}` for variant {}", manifest.variant)));
    }
    model.restore(&tensors)?;
    Ok((model, manifest))
}
