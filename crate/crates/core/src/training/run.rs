use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use candle_core::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{lr_schedule_step, multitask_loss, tb_loss, LossConfig, LossTerms, Nadam, NadamConfig, PlateauSchedule, Targets};
use crate::data::{ImageSource, SampleRecord, TbSampleRecord};
use crate::error::{Error, Result};
use crate::labels::PATHOLOGIES;
use crate::metrics::{mean_auc, roc_auc};
use crate::model::{images_to_tensor, swap_head_for_tb, HeadOutputs, Model, PredictionRecord, Variant, MODEL_DTYPE};
use crate::preprocess::{normalize, prepare_raw, AugmentConfig, AugmentDraw, Image, PreprocessConfig};
use crate::rng::{rng_from, sample_seed, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    ValLoss,
    ValAuc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Divisor applied when the validation loss plateaus.
    pub lr_factor: f64,
    pub plateau_patience: usize,
    pub min_delta: f64,
    pub lr_floor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub momentum_decay: f64,
    pub max_epochs: usize,
    /// Stop once the learning rate sits at the floor and this many further
    /// epochs pass without improvement.
    pub early_stop_patience: usize,
    pub selection_metric: SelectionMetric,
    /// Keep resized raw images in memory between epochs.
    pub cache_images: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            initial_lr: 1e-3,
            lr_factor: 10.0,
            plateau_patience: 1,
            min_delta: 1e-4,
            lr_floor: 1e-7,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            momentum_decay: 0.004,
            max_epochs: 30,
            early_stop_patience: 3,
            selection_metric: SelectionMetric::ValLoss,
            cache_images: false,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> PlateauSchedule {
        PlateauSchedule {
            factor: self.lr_factor,
            patience: self.plateau_patience,
            min_delta: self.min_delta,
            floor: self.lr_floor,
        }
    }

    pub fn nadam(&self) -> NadamConfig {
        NadamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            momentum_decay: self.momentum_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.initial_lr, self.lr_floor, self.beta1, self.beta2, self.epsilon];
        if self.batch_size == 0 || self.max_epochs == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("batch_size, max_epochs, learning rates and optimizer constants must be positive".into()));
        }
        if !(self.lr_factor > 1.0) {
            return Err(Error::Config(format!("lr_factor must exceed 1, got {}", self.lr_factor)));
        }
        if self.plateau_patience == 0 {
            return Err(Error::Config("plateau_patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_binary: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_age: Option<f64>,
    pub val_loss: f64,
    pub val_binary: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_age: Option<f64>,
    pub val_metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub phase: u8,
    pub variant: Variant,
    pub selection_metric: SelectionMetric,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_value: f64,
}

impl TrainingLog {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.epochs {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }
}

/// Loads, resizes, augments and normalizes batches. Each sample's
/// augmentation stream is keyed by (seed, epoch, sample index).
struct Pipeline<'a> {
    images: &'a dyn ImageSource,
    preprocess: &'a PreprocessConfig,
    augment: &'a AugmentConfig,
    cache: Option<Mutex<HashMap<String, Image>>>,
}

impl Pipeline<'_> {
    fn prepared(&self, id: &str) -> Result<Image> {
        if let Some(cache) = &self.cache {
            if let Some(img) = cache.lock().expect("cache lock").get(id) {
                return Ok(img.clone());
            }
        }
        let img = prepare_raw(&self.images.load(id)?, self.preprocess)?;
        if let Some(cache) = &self.cache {
            cache.lock().expect("cache lock").insert(id.to_string(), img.clone());
        }
        Ok(img)
    }

    fn batch(&self, ids: &[&str], augment: Option<(u64, u64, &[usize])>) -> Result<Tensor> {
        let mut out = Vec::with_capacity(ids.len());
        for (j, id) in ids.iter().enumerate() {
            let mut img = self.prepared(id)?;
            if let Some((seed, epoch, idx)) = augment {
                let mut rng = rng_from(sample_seed(seed, epoch, idx[j] as u64));
                img = AugmentDraw::sample(self.augment, &mut rng).apply(&img);
            }
            out.push(normalize(&img, self.preprocess)?);
        }
        images_to_tensor(&out)
    }
}

trait Task {
    fn train_ids(&self) -> Vec<&str>;
    fn val_ids(&self) -> Vec<&str>;
    fn train_targets(&self, idx: &[usize]) -> Result<Targets>;
    fn val_targets(&self, idx: &[usize]) -> Result<Targets>;
    fn loss(&self, out: &HeadOutputs, t: &Targets) -> Result<LossTerms>;
    fn val_metrics(&self, preds: &[PredictionRecord]) -> Result<BTreeMap<String, f64>>;
    fn auc_key(&self) -> &'static str;
}

pub struct Phase1Data<'a> {
    pub train: &'a [SampleRecord],
    pub validation: &'a [SampleRecord],
    pub images: &'a dyn ImageSource,
    pub preprocess: &'a PreprocessConfig,
    pub augment: &'a AugmentConfig,
    pub loss: &'a LossConfig,
}

pub struct Phase2Data<'a> {
    pub train: &'a [TbSampleRecord],
    pub validation: &'a [TbSampleRecord],
    pub images: &'a dyn ImageSource,
    pub preprocess: &'a PreprocessConfig,
    pub augment: &'a AugmentConfig,
    pub loss: &'a LossConfig,
}

struct Phase1Task<'a> {
    data: &'a Phase1Data<'a>,
    variant: Variant,
}

fn auc_or_none(scores: &[f64], labels: &[u8]) -> Option<f64> {
    roc_auc(scores, labels).ok().map(|r| r.auc)
}

impl Task for Phase1Task<'_> {
    fn train_ids(&self) -> Vec<&str> {
        self.data.train.iter().map(|r| r.image_id.as_str()).collect()
    }

    fn val_ids(&self) -> Vec<&str> {
        self.data.validation.iter().map(|r| r.image_id.as_str()).collect()
    }

    fn train_targets(&self, idx: &[usize]) -> Result<Targets> {
        let recs: Vec<&SampleRecord> = idx.iter().map(|&i| &self.data.train[i]).collect();
        Targets::from_records(&recs, self.variant, self.data.preprocess, self.data.loss, MODEL_DTYPE)
    }

    fn val_targets(&self, idx: &[usize]) -> Result<Targets> {
        let recs: Vec<&SampleRecord> = idx.iter().map(|&i| &self.data.validation[i]).collect();
        Targets::from_records(&recs, self.variant, self.data.preprocess, self.data.loss, MODEL_DTYPE)
    }

    fn loss(&self, out: &HeadOutputs, t: &Targets) -> Result<LossTerms> {
        multitask_loss(out, t, self.data.loss)
    }

    fn val_metrics(&self, preds: &[PredictionRecord]) -> Result<BTreeMap<String, f64>> {
        let recs = self.data.validation;
        let mut m = BTreeMap::new();
        let mut per_label = Vec::with_capacity(PATHOLOGIES.len());
        for (k, name) in PATHOLOGIES.iter().enumerate() {
            let scores: Vec<f64> = preds.iter().map(|p| p.pathology_probs.map_or(0.5, |v| v[k])).collect();
            let labels: Vec<u8> = recs.iter().map(|r| r.pathology[k]).collect();
            let auc = auc_or_none(&scores, &labels);
            if let Some(a) = auc {
                m.insert(format!("auc/{name}"), a);
            }
            per_label.push(auc);
        }
        if let Ok(mean) = mean_auc(&per_label) {
            m.insert("mean_auc".into(), mean.mean);
        }
        if self.variant == Variant::Metachexnet {
            let gender: Vec<f64> = preds.iter().filter_map(|p| p.gender_prob).collect();
            let position: Vec<f64> = preds.iter().filter_map(|p| p.position_prob).collect();
            let g_labels: Vec<u8> = recs.iter().map(|r| r.gender.target() as u8).collect();
            let p_labels: Vec<u8> = recs.iter().map(|r| r.position.target() as u8).collect();
            if let Some(a) = auc_or_none(&gender, &g_labels) {
                m.insert("auc/gender".into(), a);
            }
            if let Some(a) = auc_or_none(&position, &p_labels) {
                m.insert("auc/position".into(), a);
            }
            let mae: f64 = preds
                .iter()
                .zip(recs)
                .filter_map(|(p, r)| p.age_scaled.map(|a| (a * self.data.preprocess.age_scale_max - r.age_years).abs()))
                .sum::<f64>()
                / recs.len().max(1) as f64;
            m.insert("age_mae_years".into(), mae);
        }
        Ok(m)
    }

    fn auc_key(&self) -> &'static str {
        "mean_auc"
    }
}

struct Phase2Task<'a> {
    data: &'a Phase2Data<'a>,
}

impl Task for Phase2Task<'_> {
    fn train_ids(&self) -> Vec<&str> {
        self.data.train.iter().map(|r| r.image_id.as_str()).collect()
    }

    fn val_ids(&self) -> Vec<&str> {
        self.data.validation.iter().map(|r| r.image_id.as_str()).collect()
    }

    fn train_targets(&self, idx: &[usize]) -> Result<Targets> {
        let recs: Vec<&TbSampleRecord> = idx.iter().map(|&i| &self.data.train[i]).collect();
        Targets::from_tb_records(&recs, MODEL_DTYPE)
    }

    fn val_targets(&self, idx: &[usize]) -> Result<Targets> {
        let recs: Vec<&TbSampleRecord> = idx.iter().map(|&i| &self.data.validation[i]).collect();
        Targets::from_tb_records(&recs, MODEL_DTYPE)
    }

    fn loss(&self, out: &HeadOutputs, t: &Targets) -> Result<LossTerms> {
        tb_loss(out, t, self.data.loss)
    }

    fn val_metrics(&self, preds: &[PredictionRecord]) -> Result<BTreeMap<String, f64>> {
        let scores: Vec<f64> = preds.iter().filter_map(|p| p.tb_prob).collect();
        let labels: Vec<u8> = self.data.validation.iter().map(|r| r.label).collect();
        let mut m = BTreeMap::new();
        if let Some(a) = auc_or_none(&scores, &labels) {
            m.insert("auc".into(), a);
        }
        Ok(m)
    }

    fn auc_key(&self) -> &'static str {
        "auc"
    }
}

/// Best-model selection result and the per-epoch log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: TrainingLog,
}

impl TrainOutcome {
    pub fn best_epoch(&self) -> usize {
        self.log.best_epoch
    }

    pub fn best_value(&self) -> f64 {
        self.log.best_value
    }
}

struct Accum {
    n: usize,
    total: f64,
    binary: f64,
    age: Option<f64>,
}

impl Accum {
    fn new() -> Self {
        Self {
            n: 0,
            total: 0.0,
            binary: 0.0,
            age: None,
        }
    }

    fn add(&mut self, terms: &LossTerms, n: usize) -> Result<()> {
        let w = n as f64;
        self.total += terms.total_value()? * w;
        self.binary += terms.binary * w;
        if let Some(a) = terms.age {
            *self.age.get_or_insert(0.0) += a * w;
        }
        self.n += n;
        Ok(())
    }

    fn means(&self) -> (f64, f64, Option<f64>) {
        let n = self.n.max(1) as f64;
        (self.total / n, self.binary / n, self.age.map(|a| a / n))
    }
}

fn fit<T: Task>(model: &Model, task: &T, pipeline: &Pipeline, cfg: &TrainConfig, seed: u64, phase: u8) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_ids = task.train_ids();
    let val_ids = task.val_ids();
    if train_ids.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if val_ids.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }

    let vars = model.trainable_vars().into_iter().map(|(_, v)| v).collect();
    let mut opt = Nadam::new(vars, cfg.nadam())?;
    let schedule = cfg.schedule();
    let shuffle_seed = substream(seed, "shuffle");
    let augment_seed = substream(seed, "augment");

    let mut lr = cfg.initial_lr;
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut val_history = Vec::new();
    let mut best: Option<(usize, f64, BTreeMap<String, Tensor>)> = None;
    let mut stalled_at_floor = 0;

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_ids.len()).collect();
        order.shuffle(&mut rng_from(sample_seed(shuffle_seed, epoch as u64, 0)));

        let mut train_acc = Accum::new();
        for chunk in order.chunks(cfg.batch_size) {
            let ids: Vec<&str> = chunk.iter().map(|&i| train_ids[i]).collect();
            let x = pipeline.batch(&ids, Some((augment_seed, epoch as u64, chunk)))?;
            let targets = task.train_targets(chunk)?;
            let out = model.forward(&x, true)?;
            let terms = task.loss(&out, &targets)?;
            let grads = terms.total.backward()?;
            opt.step(&grads, lr)?;
            train_acc.add(&terms, chunk.len())?;
        }

        let mut val_acc = Accum::new();
        let mut preds = Vec::with_capacity(val_ids.len());
        let all: Vec<usize> = (0..val_ids.len()).collect();
        for chunk in all.chunks(cfg.batch_size) {
            let ids: Vec<&str> = chunk.iter().map(|&i| val_ids[i]).collect();
            let x = pipeline.batch(&ids, None)?;
            let out = model.forward(&x, false)?;
            let terms = task.loss(&out, &task.val_targets(chunk)?)?;
            val_acc.add(&terms, chunk.len())?;
            let owned: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
            preds.extend(PredictionRecord::from_outputs(&owned, &out)?);
        }
        let val_metrics = task.val_metrics(&preds)?;

        let (train_loss, train_binary, train_age) = train_acc.means();
        let (val_loss, val_binary, val_age) = val_acc.means();
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::Config(format!("loss diverged at epoch {epoch}")));
        }
        match val_metrics.get(task.auc_key()) {
            Some(auc) => log::info!(
                "phase {phase} epoch {epoch}: lr {lr:e} train {train_loss:.5} val {val_loss:.5} {} {auc:.4}",
                task.auc_key()
            ),
            None => log::info!("phase {phase} epoch {epoch}: lr {lr:e} train {train_loss:.5} val {val_loss:.5}"),
        }
        log::debug!("validation metrics: {val_metrics:?}");

        let score = match cfg.selection_metric {
            SelectionMetric::ValLoss => Some(-val_loss),
            SelectionMetric::ValAuc => val_metrics.get(task.auc_key()).copied(),
        };
        if let Some(score) = score {
            if best.as_ref().is_none_or(|(_, b, _)| score > *b) {
                best = Some((epoch, score, model.snapshot()?));
            }
        }

        epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            train_binary,
            train_age,
            val_loss,
            val_binary,
            val_age,
            val_metrics,
        });

        val_history.push(val_loss);
        let improved = schedule.epochs_since_improvement(&val_history) == 0;
        if lr <= schedule.floor && !improved {
            stalled_at_floor += 1;
        } else if improved {
            stalled_at_floor = 0;
        }
        if stalled_at_floor >= cfg.early_stop_patience {
            log::info!("stopping after epoch {epoch}: learning rate at floor and no improvement");
            break;
        }
        lr = lr_schedule_step(&val_history, lr, &schedule);
    }

    let (best_epoch, best_score, snapshot) = best.ok_or_else(|| {
        Error::Config(format!(
            "no epoch produced a `{}` value to select on (does validation hold both classes?)",
            task.auc_key()
        ))
    })?;
    model.restore(&snapshot)?;
    let best_value = match cfg.selection_metric {
        SelectionMetric::ValLoss => -best_score,
        SelectionMetric::ValAuc => best_score,
    };
    Ok(TrainOutcome {
        log: TrainingLog {
            phase,
            variant: model.variant(),
            selection_metric: cfg.selection_metric,
            epochs,
            best_epoch,
            best_value,
        },
    })
}

fn pipeline<'a>(images: &'a dyn ImageSource, preprocess: &'a PreprocessConfig, augment: &'a AugmentConfig, cfg: &TrainConfig) -> Pipeline<'a> {
    Pipeline {
        images,
        preprocess,
        augment,
        cache: cfg.cache_images.then(|| Mutex::new(HashMap::new())),
    }
}

/// Phase I: multi-task training of a `metachexnet` or `chexnet` model. On
/// return the model holds the weights of the selected epoch.
pub fn train_phase1(model: &Model, data: &Phase1Data, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    if model.variant() == Variant::Tb {
        return Err(Error::VariantMismatch {
            expected: "metachexnet or chexnet".into(),
            found: model.variant().to_string(),
        });
    }
    data.loss.validate()?;
    let task = Phase1Task {
        data,
        variant: model.variant(),
    };
    fit(model, &task, &pipeline(data.images, data.preprocess, data.augment, cfg), cfg, seed, 1)
}

/// Phase II: TB fine-tuning of the whole network. A phase-I model has its
/// heads swapped for the TB head first; a model that already carries the TB
/// head (the ImageNet baseline) is trained as is.
pub fn train_phase2(model: Model, data: &Phase2Data, cfg: &TrainConfig, seed: u64) -> Result<(Model, TrainOutcome)> {
    data.loss.validate()?;
    let model = match model.variant() {
        Variant::Tb => model,
        _ => swap_head_for_tb(model, substream(seed, "tb-head"))?,
    };
    let task = Phase2Task { data };
    let outcome = fit(&model, &task, &pipeline(data.images, data.preprocess, data.augment, cfg), cfg, seed, 2)?;
    Ok((model, outcome))
}
