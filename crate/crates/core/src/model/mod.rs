//! Backbone and head topologies for the three model variants, plus
//! checkpointing.
//!
//! Parameters use torchvision names for the backbone (`features.*`) so that
//! converted ImageNet DenseNet-121 weights load directly; heads live under
//! `heads.*`.

mod backbone;
mod checkpoint;
mod heads;

pub use backbone::{
    densenet_feature_dim, Backbone, BackboneConfig, BackboneFamily, PretrainedSource, DENSENET121_BLOCKS,
    DENSENET_GROWTH_RATE,
};
pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, CheckpointManifest, CHECKPOINT_FORMAT_VERSION};
pub use heads::{head_parameter_counts, HeadOutputs, HeadSet, Variant, INTERMEDIATE_DIM};

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{VarBuilder, VarMap};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::NUM_PATHOLOGIES;
use crate::preprocess::Image;
use crate::rng::{rng_from, substream};

/// Element type of model parameters and activations.
pub const MODEL_DTYPE: DType = DType::F32;

const BACKBONE_PREFIX: &str = "features";
const HEADS_PREFIX: &str = "heads";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub backbone: BackboneConfig,
}

/// The backbone together with the variables that back it.
pub struct FeatureExtractor {
    config: BackboneConfig,
    vars: VarMap,
    net: Backbone,
}

impl FeatureExtractor {
    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.net.feature_dim()
    }

    /// `(batch, 3, H, W) -> (batch, feature_dim)`. `train` selects batch
    /// statistics (and updates running statistics) in the norm layers.
    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.net.forward_t(x, train)?)
    }

    pub fn vars(&self) -> &VarMap {
        &self.vars
    }
}

/// Build the feature extractor. Random weights are drawn from `seed`;
/// `imagenet` requires `weights_path` to point at a safetensors file.
pub fn build_backbone(cfg: &BackboneConfig, seed: u64) -> Result<FeatureExtractor> {
    let vars = VarMap::new();
    let device = Device::Cpu;
    let net = Backbone::new(cfg, VarBuilder::from_varmap(&vars, MODEL_DTYPE, &device).pp(BACKBONE_PREFIX))?;
    init_vars(&vars, seed)?;
    if cfg.pretrained_source == PretrainedSource::Imagenet {
        let path = cfg
            .weights_path
            .as_deref()
            .ok_or_else(|| Error::Config("pretrained_source = imagenet needs backbone.weights_path".into()))?;
        load_pretrained(&vars, path)?;
    }
    Ok(FeatureExtractor {
        config: cfg.clone(),
        vars,
        net,
    })
}

/// Copy every backbone parameter from a safetensors file. Extra tensors in
/// the file (e.g. a classifier layer) are ignored.
pub fn load_pretrained(vars: &VarMap, path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::MissingWeights(path.to_path_buf()));
    }
    let tensors = candle_core::safetensors::load(path, &Device::Cpu)?;
    let data = vars.data().lock().expect("var map lock");
    for (name, var) in data.iter() {
        let t = tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("{} has no tensor `{name}`", path.display())))?;
        if t.dims() != var.dims() {
            return Err(Error::Shape(format!("`{name}`: file has {:?}, model has {:?}", t.dims(), var.dims())));
        }
        var.set(&t.to_dtype(var.dtype())?)?;
    }
    Ok(())
}

fn is_running_stat(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

/// Seeded initialization. Convolution kernels get He-normal weights, linear
/// layers uniform weights in ±1/sqrt(fan_in) with zero bias; normalization
/// layers keep their unit/zero defaults. Each tensor draws from its own
/// substream keyed by name.
fn init_vars(vars: &VarMap, seed: u64) -> Result<()> {
    let data = vars.data().lock().expect("var map lock");
    for (name, var) in data.iter() {
        let dims = var.dims().to_vec();
        let mut rng = rng_from(substream(seed, name));
        let values: Vec<f32> = match dims.len() {
            4 => {
                let fan_in = (dims[1] * dims[2] * dims[3]) as f32;
                let normal = Normal::new(0.0f32, (2.0 / fan_in).sqrt()).expect("positive std");
                (0..var.elem_count()).map(|_| normal.sample(&mut rng)).collect()
            }
            2 => {
                let bound = 1.0 / (dims[1] as f32).sqrt();
                (0..var.elem_count()).map(|_| rng.random_range(-bound..=bound)).collect()
            }
            _ if name.starts_with(HEADS_PREFIX) && name.ends_with("bias") => vec![0.0; var.elem_count()],
            _ => continue,
        };
        var.set(&Tensor::from_vec(values, dims, &Device::Cpu)?.to_dtype(var.dtype())?)?;
    }
    Ok(())
}

fn snapshot_of(vars: &VarMap) -> Result<BTreeMap<String, Tensor>> {
    let data = vars.data().lock().expect("var map lock");
    data.iter()
        .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
        .collect()
}

/// A backbone with a head set attached.
pub struct Model {
    variant: Variant,
    extractor: FeatureExtractor,
    head_vars: VarMap,
    heads: HeadSet,
}

/// Attach freshly initialized heads for `variant`.
pub fn attach_heads(extractor: FeatureExtractor, variant: Variant, seed: u64) -> Result<Model> {
    let head_vars = VarMap::new();
    let heads = HeadSet::new(
        variant,
        extractor.feature_dim(),
        VarBuilder::from_varmap(&head_vars, MODEL_DTYPE, &Device::Cpu).pp(HEADS_PREFIX),
    )?;
    init_vars(&head_vars, seed)?;
    Ok(Model {
        variant,
        extractor,
        head_vars,
        heads,
    })
}

/// Replace the phase-I heads with a fresh single-output TB head. Backbone
/// parameters are kept exactly; the whole network remains trainable.
pub fn swap_head_for_tb(model: Model, seed: u64) -> Result<Model> {
    let mut extractor = model.extractor;
    extractor.config.pretrained_source = PretrainedSource::Phase1Checkpoint;
    attach_heads(extractor, Variant::Tb, seed)
}

impl Model {
    /// Build backbone and heads from scratch.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let extractor = build_backbone(&spec.backbone, substream(seed, "backbone"))?;
        attach_heads(extractor, spec.variant, substream(seed, "heads"))
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            variant: self.variant,
            backbone: self.extractor.config.clone(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor.feature_dim()
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn heads(&self) -> &HeadSet {
        &self.heads
    }

    pub fn features(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.extractor.forward_t(x, train)
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<HeadOutputs> {
        self.heads.forward(&self.features(x, train)?)
    }

    /// Parameters that receive gradients, sorted by name. Norm-layer
    /// running statistics are excluded.
    pub fn trainable_vars(&self) -> Vec<(String, Var)> {
        let mut out: Vec<(String, Var)> = Vec::new();
        for vm in [&self.extractor.vars, &self.head_vars] {
            let data = vm.data().lock().expect("var map lock");
            out.extend(
                data.iter()
                    .filter(|(k, _)| !is_running_stat(k))
                    .map(|(k, v)| (k.clone(), v.clone())),
            );
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Copies of every parameter and running statistic, keyed by name.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut all = snapshot_of(&self.extractor.vars)?;
        all.extend(snapshot_of(&self.head_vars)?);
        Ok(all)
    }

    pub fn backbone_snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        snapshot_of(&self.extractor.vars)
    }

    /// Overwrite parameters from a snapshot. Every model tensor must be present.
    pub fn restore(&self, snapshot: &BTreeMap<String, Tensor>) -> Result<()> {
        for vm in [&self.extractor.vars, &self.head_vars] {
            let data = vm.data().lock().expect("var map lock");
            for (name, var) in data.iter() {
                let t = snapshot
                    .get(name)
                    .ok_or_else(|| Error::Integrity(format!("missing tensor `{name}`")))?;
                if t.dims() != var.dims() {
                    return Err(Error::Shape(format!(
                        "`{name}`: stored {:?}, model has {:?}",
                        t.dims(),
                        var.dims()
                    )));
                }
                var.set(&t.to_dtype(var.dtype())?)?;
            }
        }
        Ok(())
    }

    /// Eval-mode inference producing one record per image.
    pub fn predict(&self, ids: &[String], images: &[Image]) -> Result<Vec<PredictionRecord>> {
        let x = images_to_tensor(images)?;
        let out = self.forward(&x, false)?;
        PredictionRecord::from_outputs(ids, &out)
    }
}

/// Stack equally sized 3-channel images into a `(batch, 3, H, W)` tensor.
pub fn images_to_tensor(images: &[Image]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
    let (c, h, w) = first.shape();
    if c != 3 {
        return Err(Error::Shape(format!("model input needs 3 channels, got {c}")));
    }
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if img.shape() != (c, h, w) {
            return Err(Error::Shape(format!("mixed image shapes {:?} and {:?}", first.shape(), img.shape())));
        }
        data.extend_from_slice(img.data());
    }
    Ok(Tensor::from_vec(data, (images.len(), c, h, w), &Device::Cpu)?)
}

/// Per-image model outputs. Fields not produced by the variant are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub pathology_probs: Option<[f64; NUM_PATHOLOGIES]>,
    pub gender_prob: Option<f64>,
    pub position_prob: Option<f64>,
    pub age_scaled: Option<f64>,
    pub tb_prob: Option<f64>,
}

// Keep materialized probabilities inside the open unit interval even when
// an f32 sigmoid saturates.
fn open_unit(p: f64) -> f64 {
    p.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

fn rows(t: &Option<Tensor>) -> Result<Option<Vec<Vec<f64>>>> {
    t.as_ref()
        .map(|t| Ok(t.to_dtype(DType::F64)?.to_vec2::<f64>()?))
        .transpose()
}

impl PredictionRecord {
    pub fn from_outputs(ids: &[String], out: &HeadOutputs) -> Result<Vec<Self>> {
        let pathology = rows(&out.pathology)?;
        let meta = rows(&out.meta)?;
        let age = rows(&out.age)?;
        let tb = rows(&out.tb)?;
        let n = [&pathology, &meta, &age, &tb]
            .iter()
            .find_map(|r| r.as_ref().map(Vec::len))
            .unwrap_or(0);
        if n != ids.len() {
            return Err(Error::Shape(format!("{} ids for {n} predictions", ids.len())));
        }
        Ok((0..n)
            .map(|i| PredictionRecord {
                image_id: ids[i].clone(),
                pathology_probs: pathology.as_ref().map(|p| std::array::from_fn(|k| open_unit(p[i][k]))),
                gender_prob: meta.as_ref().map(|m| open_unit(m[i][0])),
                position_prob: meta.as_ref().map(|m| open_unit(m[i][1])),
                age_scaled: age.as_ref().map(|a| open_unit(a[i][0])),
                tb_prob: tb.as_ref().map(|t| open_unit(t[i][0])),
            })
            .collect())
    }
}
