use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{SampleRecord, TbSampleRecord};
use crate::error::{Error, Result};
use crate::model::{HeadOutputs, Variant};
use crate::preprocess::{scale_age, PreprocessConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub binary_weight: f64,
    pub age_weight: f64,
    /// Probabilities are clamped to `[epsilon, 1 - epsilon]` before the log.
    pub epsilon: f64,
    /// Leave samples flagged `age_suspect` out of the age term.
    pub drop_suspect_ages: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            binary_weight: 1.0,
            age_weight: 1.0,
            epsilon: 1e-7,
            drop_suspect_ages: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.01) {
            return Err(Error::Config(format!("loss epsilon must lie in (0, 0.01), got {}", self.epsilon)));
        }
        if !(self.binary_weight >= 0.0 && self.age_weight >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Targets for one batch.
#[derive(Debug, Clone)]
pub struct Targets {
    /// `(batch, k)` binary targets: 14 pathologies, then gender and position
    /// for the metadata variant; a single column for TB.
    pub binary: Tensor,
    /// `(batch, 1)` scaled age, metadata variant only.
    pub age: Option<Tensor>,
    /// `(batch, 1)` 1 where the age term applies.
    pub age_mask: Option<Tensor>,
}

impl Targets {
    pub fn batch_size(&self) -> Result<usize> {
        Ok(self.binary.dim(0)?)
    }

    /// Targets for phase-I records.
    pub fn from_records(
        records: &[&SampleRecord],
        variant: Variant,
        pre: &PreprocessConfig,
        loss: &LossConfig,
        dtype: DType,
    ) -> Result<Self> {
        let n = records.len();
        let dev = Device::Cpu;
        match variant {
            Variant::Chexnet => {
                let data: Vec<f64> = records.iter().flat_map(|r| r.pathology_targets()).collect();
                Ok(Self {
                    binary: Tensor::from_vec(data, (n, 14), &dev)?.to_dtype(dtype)?,
                    age: None,
                    age_mask: None,
                })
            }
            Variant::Metachexnet => {
                let mut binary = Vec::with_capacity(n * 16);
                let mut age = Vec::with_capacity(n);
                let mut mask = Vec::with_capacity(n);
                for r in records {
                    binary.extend(r.pathology_targets());
                    binary.push(r.gender.target());
                    binary.push(r.position.target());
                    age.push(scale_age(r.age_years, pre)?);
                    mask.push(if loss.drop_suspect_ages && r.age_suspect { 0.0 } else { 1.0 });
                }
                Ok(Self {
                    binary: Tensor::from_vec(binary, (n, 16), &dev)?.to_dtype(dtype)?,
                    age: Some(Tensor::from_vec(age, (n, 1), &dev)?.to_dtype(dtype)?),
                    age_mask: Some(Tensor::from_vec(mask, (n, 1), &dev)?.to_dtype(dtype)?),
                })
            }
            Variant::Tb => Err(Error::Config("TB targets come from TB records".into())),
        }
    }

    pub fn from_tb_records(records: &[&TbSampleRecord], dtype: DType) -> Result<Self> {
        let data: Vec<f64> = records.iter().map(|r| r.label as f64).collect();
        Ok(Self {
            binary: Tensor::from_vec(data, (records.len(), 1), &Device::Cpu)?.to_dtype(dtype)?,
            age: None,
            age_mask: None,
        })
    }
}

/// Scalar loss and its terms.
#[derive(Debug, Clone)]
pub struct LossTerms {
    /// Weighted total, differentiable.
    pub total: Tensor,
    /// Unweighted mean binary cross entropy.
    pub binary: f64,
    /// Unweighted mean absolute age error on the scaled axis.
    pub age: Option<f64>,
}

impl LossTerms {
    pub fn total_value(&self) -> Result<f64> {
        Ok(self.total.to_dtype(DType::F64)?.to_scalar::<f64>()?)
    }
}

/// Elementwise binary cross entropy with clamped probabilities.
pub fn bce(p: &Tensor, y: &Tensor, epsilon: f64) -> Result<Tensor> {
    if p.dims() != y.dims() {
        return Err(Error::Shape(format!("predictions {:?} vs targets {:?}", p.dims(), y.dims())));
    }
    let p = p.clamp(epsilon, 1.0 - epsilon)?;
    let pos = (y * p.log()?)?;
    let neg = (y.affine(-1.0, 1.0)? * p.affine(-1.0, 1.0)?.log()?)?;
    Ok((pos + neg)?.neg()?)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Weighted sum of the mean BCE over every binary output and the mean
/// absolute error of the age output.
pub fn multitask_loss(out: &HeadOutputs, targets: &Targets, cfg: &LossConfig) -> Result<LossTerms> {
    let pathology = out
        .pathology
        .as_ref()
        .ok_or_else(|| Error::Shape("multitask loss needs pathology outputs".into()))?;
    let binary_pred = match &out.meta {
        Some(meta) => Tensor::cat(&[pathology, meta], 1)?,
        None => pathology.clone(),
    };
    let binary_loss = bce(&binary_pred, &targets.binary, cfg.epsilon)?.mean_all()?;
    let binary_value = scalar(&binary_loss)?;
    let mut total = binary_loss.affine(cfg.binary_weight, 0.0)?;

    let age_value = match (&out.age, &targets.age) {
        (Some(pred), Some(target)) => {
            if pred.dims() != target.dims() {
                return Err(Error::Shape(format!("age predictions {:?} vs targets {:?}", pred.dims(), target.dims())));
            }
            let abs = (pred - target)?.abs()?;
            let (abs_sum, count) = match &targets.age_mask {
                Some(mask) => ((abs * mask)?.sum_all()?, scalar(&mask.sum_all()?)?),
                None => (abs.sum_all()?, pred.elem_count() as f64),
            };
            if count > 0.0 {
                let age_loss = abs_sum.affine(1.0 / count, 0.0)?;
                let v = scalar(&age_loss)?;
                total = (total + age_loss.affine(cfg.age_weight, 0.0)?)?;
                Some(v)
            } else {
                Some(0.0)
            }
        }
        (None, None) => None,
        _ => return Err(Error::Shape("age prediction and target must both be present".into())),
    };

    Ok(LossTerms {
        total,
        binary: binary_value,
        age: age_value,
    })
}

/// Binary cross entropy on the single TB output.
pub fn tb_loss(out: &HeadOutputs, targets: &Targets, cfg: &LossConfig) -> Result<LossTerms> {
    let p = out.tb.as_ref().ok_or_else(|| Error::Shape("TB loss needs the TB output".into()))?;
    let loss = bce(p, &targets.binary, cfg.epsilon)?.mean_all()?;
    let v = scalar(&loss)?;
    Ok(LossTerms {
        total: loss,
        binary: v,
        age: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64], cols: usize) -> Tensor {
        Tensor::from_vec(v.to_vec(), (v.len() / cols, cols), &Device::Cpu).unwrap()
    }

    fn outputs(pathology: &[f64], meta: &[f64], age: Option<f64>) -> HeadOutputs {
        HeadOutputs {
            pathology: Some(t(pathology, 14)),
            meta: Some(t(meta, 2)),
            age: age.map(|a| t(&[a], 1)),
            tb: None,
        }
    }

    fn targets(binary: &[f64], age: Option<f64>) -> Targets {
        Targets {
            binary: t(binary, 16),
            age: age.map(|a| t(&[a], 1)),
            age_mask: None,
        }
    }

    #[test]
    fn exact_predictions_give_zero_loss() {
        let y: Vec<f64> = (0..16).map(|i| (i % 2) as f64).collect();
        let out = outputs(&y[..14], &y[14..], Some(0.42));
        let terms = multitask_loss(&out, &targets(&y, Some(0.42)), &LossConfig::default()).unwrap();
        // Clamping leaves -ln(1 - 1e-7) per output.
        assert!(terms.total_value().unwrap() < 2e-7);
        assert_eq!(terms.age, Some(0.0));
    }

    #[test]
    fn single_binary_half_probability() {
        let p = t(&[0.5], 1);
        let y = t(&[1.0], 1);
        let v = bce(&p, &y, 1e-7).unwrap().to_vec2::<f64>().unwrap()[0][0];
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mislabeled_age_term() {
        // 40.5 years predicted against a recorded 155.
        let y = vec![0.0; 16];
        let out = outputs(&[0.5; 14], &[0.5; 2], Some(0.405));
        let cfg = LossConfig {
            binary_weight: 0.0,
            ..Default::default()
        };
        let terms = multitask_loss(&out, &targets(&y, Some(1.55)), &cfg).unwrap();
        assert!((terms.age.unwrap() - 1.145).abs() < 1e-12);
        assert!((terms.total_value().unwrap() - 1.145).abs() < 1e-12);
    }

    #[test]
    fn term_decomposition() {
        let y: Vec<f64> = (0..16).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
        let p: Vec<f64> = (0..16).map(|i| 0.1 + 0.05 * i as f64).collect();
        let out = outputs(&p[..14], &p[14..], Some(0.3));
        let tg = targets(&y, Some(0.55));
        let full = multitask_loss(&out, &tg, &LossConfig::default()).unwrap();
        let no_age = multitask_loss(&out, &tg, &LossConfig { age_weight: 0.0, ..Default::default() }).unwrap();
        let no_bin = multitask_loss(&out, &tg, &LossConfig { binary_weight: 0.0, ..Default::default() }).unwrap();
        let pure_bce = bce(&Tensor::cat(&[out.pathology.as_ref().unwrap(), out.meta.as_ref().unwrap()], 1).unwrap(), &tg.binary, 1e-7)
            .unwrap()
            .mean_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!((no_age.total_value().unwrap() - pure_bce).abs() < 1e-12);
        assert!((no_bin.total_value().unwrap() - 0.25).abs() < 1e-12);
        assert!((full.total_value().unwrap() - pure_bce - 0.25).abs() < 1e-12);
    }

    #[test]
    fn clamped_bce_is_finite_at_extremes() {
        let p = t(&[0.0, 1.0, 0.0, 1.0], 1);
        let y = t(&[0.0, 1.0, 1.0, 0.0], 1);
        let v = bce(&p, &y, 1e-7).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(v.iter().all(|x| x.is_finite()));
        assert!((v[2] - (-(1e-7f64).ln())).abs() < 1e-6);
    }

    #[test]
    fn tb_loss_examples() {
        let cfg = LossConfig::default();
        let out = |p: f64| HeadOutputs {
            pathology: None,
            meta: None,
            age: None,
            tb: Some(t(&[p], 1)),
        };
        let tg = |y: f64| Targets {
            binary: t(&[y], 1),
            age: None,
            age_mask: None,
        };
        assert!(tb_loss(&out(1.0), &tg(1.0), &cfg).unwrap().total_value().unwrap() < 1e-6);
        assert!((tb_loss(&out(0.5), &tg(0.0), &cfg).unwrap().total_value().unwrap() - 2f64.ln()).abs() < 1e-6);
        for p in [0.01, 0.2, 0.73, 0.999] {
            let a = tb_loss(&out(p), &tg(1.0), &cfg).unwrap().total_value().unwrap();
            let b = tb_loss(&out(1.0 - p), &tg(0.0), &cfg).unwrap().total_value().unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let out = outputs(&[0.5; 14], &[0.5; 2], None);
        let bad = Targets {
            binary: t(&[0.0; 14], 14),
            age: None,
            age_mask: None,
        };
        assert!(matches!(multitask_loss(&out, &bad, &LossConfig::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn masked_ages_are_left_out() {
        let out = HeadOutputs {
            pathology: Some(t(&[0.5; 28], 14)),
            meta: Some(t(&[0.5; 4], 2)),
            age: Some(t(&[0.4, 0.4], 1)),
            tb: None,
        };
        let tg = Targets {
            binary: t(&[0.0; 32], 16),
            age: Some(t(&[0.5, 1.55], 1)),
            age_mask: Some(t(&[1.0, 0.0], 1)),
        };
        let terms = multitask_loss(&out, &tg, &LossConfig::default()).unwrap();
        assert!((terms.age.unwrap() - 0.1).abs() < 1e-12);
    }
}
