use std::path::PathBuf;

use candle_core::{Module, ModuleT, Tensor};
use candle_nn::{batch_norm, conv2d_no_bias, BatchNorm, BatchNormConfig, Conv2d, Conv2dConfig, VarBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneFamily {
    Densenet121,
    /// Small fixed convolutional stack for tests and desk-scale runs. Not a
    /// published architecture.
    TinyTestCnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainedSource {
    Imagenet,
    Phase1Checkpoint,
    Random,
}

/// DenseNet-121 layer counts per dense block.
pub const DENSENET121_BLOCKS: [usize; 4] = [6, 12, 24, 16];
pub const DENSENET_GROWTH_RATE: usize = 32;
pub const DENSENET_INIT_FEATURES: usize = 64;
/// Bottleneck width multiplier (1x1 conv outputs `BN_SIZE * growth` channels).
pub const DENSENET_BN_SIZE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub family: BackboneFamily,
    /// Transition-layer compression factor θ.
    pub compression: f64,
    pub pretrained_source: PretrainedSource,
    pub feature_dim: usize,
    /// Weight file for `pretrained_source = imagenet`, in safetensors format
    /// with torchvision parameter names (`features.conv0.weight`, ...).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights_path: Option<PathBuf>,
    pub batch_norm_momentum: f64,
    pub batch_norm_eps: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::densenet121()
    }
}

impl BackboneConfig {
    pub fn densenet121() -> Self {
        Self {
            family: BackboneFamily::Densenet121,
            compression: 0.5,
            pretrained_source: PretrainedSource::Random,
            feature_dim: densenet_feature_dim(0.5),
            weights_path: None,
            batch_norm_momentum: 0.1,
            batch_norm_eps: 1e-5,
        }
    }

    pub fn tiny(feature_dim: usize) -> Self {
        Self {
            family: BackboneFamily::TinyTestCnn,
            compression: 0.5,
            pretrained_source: PretrainedSource::Random,
            feature_dim,
            weights_path: None,
            batch_norm_momentum: 0.1,
            batch_norm_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(Error::Config(format!("compression must lie in (0, 1], got {}", self.compression)));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if self.family == BackboneFamily::Densenet121 {
            let expected = densenet_feature_dim(self.compression);
            if self.feature_dim != expected {
                return Err(Error::Config(format!(
                    "densenet121 with compression {} produces {expected} features, config says {}",
                    self.compression, self.feature_dim
                )));
            }
        }
        Ok(())
    }

    fn bn_config(&self) -> BatchNormConfig {
        BatchNormConfig {
            eps: self.batch_norm_eps,
            momentum: self.batch_norm_momentum,
            ..Default::default()
        }
    }
}

/// Channel count after the final dense block.
pub fn densenet_feature_dim(compression: f64) -> usize {
    let mut c = DENSENET_INIT_FEATURES;
    for (i, &layers) in DENSENET121_BLOCKS.iter().enumerate() {
        c += layers * DENSENET_GROWTH_RATE;
        if i + 1 < DENSENET121_BLOCKS.len() {
            c = (c as f64 * compression).floor() as usize;
        }
    }
    c
}

fn conv(in_c: usize, out_c: usize, k: usize, stride: usize, padding: usize, vb: VarBuilder) -> candle_core::Result<Conv2d> {
    let cfg = Conv2dConfig {
        padding,
        stride,
        ..Default::default()
    };
    conv2d_no_bias(in_c, out_c, k, cfg, vb)
}

struct DenseLayer {
    norm1: BatchNorm,
    conv1: Conv2d,
    norm2: BatchNorm,
    conv2: Conv2d,
}

impl DenseLayer {
    fn new(in_c: usize, bn: BatchNormConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        let mid = DENSENET_BN_SIZE * DENSENET_GROWTH_RATE;
        Ok(Self {
            norm1: batch_norm(in_c, bn, vb.pp("norm1"))?,
            conv1: conv(in_c, mid, 1, 1, 0, vb.pp("conv1"))?,
            norm2: batch_norm(mid, bn, vb.pp("norm2"))?,
            conv2: conv(mid, DENSENET_GROWTH_RATE, 3, 1, 1, vb.pp("conv2"))?,
        })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let y = self.norm1.forward_t(x, train)?.relu()?;
        let y = self.conv1.forward(&y)?;
        let y = self.norm2.forward_t(&y, train)?.relu()?;
        let y = self.conv2.forward(&y)?;
        Tensor::cat(&[x, &y], 1)
    }
}

struct Transition {
    norm: BatchNorm,
    conv: Conv2d,
}

impl Transition {
    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let y = self.norm.forward_t(x, train)?.relu()?;
        self.conv.forward(&y)?.avg_pool2d(2)
    }
}

struct DenseNet {
    conv0: Conv2d,
    norm0: BatchNorm,
    blocks: Vec<Vec<DenseLayer>>,
    transitions: Vec<Transition>,
    norm5: BatchNorm,
}

impl DenseNet {
    fn new(cfg: &BackboneConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        let bn = cfg.bn_config();
        let conv0 = conv(3, DENSENET_INIT_FEATURES, 7, 2, 3, vb.pp("conv0"))?;
        let norm0 = batch_norm(DENSENET_INIT_FEATURES, bn, vb.pp("norm0"))?;
        let mut c = DENSENET_INIT_FEATURES;
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for (b, &layers) in DENSENET121_BLOCKS.iter().enumerate() {
            let vb_block = vb.pp(format!("denseblock{}", b + 1));
            let mut block = Vec::with_capacity(layers);
            for l in 0..layers {
                block.push(DenseLayer::new(c, bn, vb_block.pp(format!("denselayer{}", l + 1)))?);
                c += DENSENET_GROWTH_RATE;
            }
            blocks.push(block);
            if b + 1 < DENSENET121_BLOCKS.len() {
                let out = (c as f64 * cfg.compression).floor() as usize;
                let vb_t = vb.pp(format!("transition{}", b + 1));
                transitions.push(Transition {
                    norm: batch_norm(c, bn, vb_t.pp("norm"))?,
                    conv: conv(c, out, 1, 1, 0, vb_t.pp("conv"))?,
                });
                c = out;
            }
        }
        let norm5 = batch_norm(c, bn, vb.pp("norm5"))?;
        Ok(Self {
            conv0,
            norm0,
            blocks,
            transitions,
            norm5,
        })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let y = self.conv0.forward(x)?;
        let y = self.norm0.forward_t(&y, train)?.relu()?;
        // Zero padding is exact for max pooling here: inputs are post-ReLU.
        let mut y = y.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?.max_pool2d_with_stride(3, 2)?;
        for (b, block) in self.blocks.iter().enumerate() {
            for layer in block {
                y = layer.forward_t(&y, train)?;
            }
            if let Some(t) = self.transitions.get(b) {
                y = t.forward_t(&y, train)?;
            }
        }
        let y = self.norm5.forward_t(&y, train)?.relu()?;
        global_average_pool(&y)
    }
}

struct TinyCnn {
    convs: Vec<Conv2d>,
    norms: Vec<BatchNorm>,
}

impl TinyCnn {
    fn new(cfg: &BackboneConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        let widths = [3, 16, 32, cfg.feature_dim];
        let bn = cfg.bn_config();
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for i in 0..3 {
            convs.push(conv(widths[i], widths[i + 1], 3, 2, 1, vb.pp(format!("conv{}", i + 1)))?);
            norms.push(batch_norm(widths[i + 1], bn, vb.pp(format!("norm{}", i + 1)))?);
        }
        Ok(Self { convs, norms })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let mut y = x.clone();
        for (c, n) in self.convs.iter().zip(&self.norms) {
            y = n.forward_t(&c.forward(&y)?, train)?.relu()?;
        }
        global_average_pool(&y)
    }
}

fn global_average_pool(x: &Tensor) -> candle_core::Result<Tensor> {
    x.mean(3)?.mean(2)
}

/// Convolutional feature extractor: `(batch, 3, H, W) -> (batch, feature_dim)`.
pub struct Backbone {
    inner: BackboneInner,
    feature_dim: usize,
}

enum BackboneInner {
    DenseNet(DenseNet),
    Tiny(TinyCnn),
}

impl Backbone {
    /// Build the layers, registering parameters under `vb` (conventionally
    /// the `features` prefix).
    pub(crate) fn new(cfg: &BackboneConfig, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        let inner = match cfg.family {
            BackboneFamily::Densenet121 => BackboneInner::DenseNet(DenseNet::new(cfg, vb)?),
            BackboneFamily::TinyTestCnn => BackboneInner::Tiny(TinyCnn::new(cfg, vb)?),
        };
        Ok(Self {
            inner,
            feature_dim: cfg.feature_dim,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        match &self.inner {
            BackboneInner::DenseNet(m) => m.forward_t(x, train),
            BackboneInner::Tiny(m) => m.forward_t(x, train),
        }
    }
}
