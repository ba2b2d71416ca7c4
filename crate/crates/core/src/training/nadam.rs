//! Adam with Nesterov momentum, using the decaying momentum schedule
//! `mu_t = beta1 * (1 - 0.5 * 0.96^(t * momentum_decay))`.

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NadamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub momentum_decay: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            momentum_decay: 0.004,
        }
    }
}

struct Slot {
    var: Var,
    m: Tensor,
    v: Tensor,
}

pub struct Nadam {
    cfg: NadamConfig,
    slots: Vec<Slot>,
    step: u64,
    mu_product: f64,
}

impl Nadam {
    pub fn new(vars: Vec<Var>, cfg: NadamConfig) -> Result<Self> {
        let slots = vars
            .into_iter()
            .map(|var| {
                let m = var.zeros_like()?;
                let v = var.zeros_like()?;
                Ok(Slot { var, m, v })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            slots,
            step: 0,
            mu_product: 1.0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    fn mu(&self, t: u64) -> f64 {
        self.cfg.beta1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * self.cfg.momentum_decay))
    }

    /// One update with learning rate `lr`. Variables without a gradient are
    /// left alone.
    pub fn step(&mut self, grads: &candle_core::backprop::GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step;
        let mu_t = self.mu(t);
        let mu_next = self.mu(t + 1);
        self.mu_product *= mu_t;
        let mu_product_next = self.mu_product * mu_next;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bias2 = 1.0 - b2.powi(t as i32);

        for slot in &mut self.slots {
            let Some(g) = grads.get(slot.var.as_tensor()) else {
                continue;
            };
            slot.m = ((&slot.m * b1)? + (g * (1.0 - b1))?)?;
            slot.v = ((&slot.v * b2)? + (g.sqr()? * (1.0 - b2))?)?;
            let m_hat = ((&slot.m * (mu_next / (1.0 - mu_product_next)))? + (g * ((1.0 - mu_t) / (1.0 - self.mu_product)))?)?;
            let denom = ((&slot.v * (1.0 / bias2))?.sqrt()? + self.cfg.epsilon)?;
            let update = ((m_hat / denom)? * lr)?;
            slot.var.set(&slot.var.as_tensor().sub(&update)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let w = Var::from_vec(vec![0.3f64, -1.2, 2.0], 3, &Device::Cpu).unwrap();
        let before = w.as_tensor().to_vec1::<f64>().unwrap();
        let mut opt = Nadam::new(vec![w.clone()], NadamConfig::default()).unwrap();
        let loss = w.as_tensor().sqr().unwrap().sum_all().unwrap();
        opt.step(&loss.backward().unwrap(), 0.0).unwrap();
        assert_eq!(w.as_tensor().to_vec1::<f64>().unwrap(), before);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // With m0 = v0 = 0 the first update reduces to
        // lr * (mu2 / (1 - mu1 mu2) * (1 - b1) g + (1 - mu1) / (1 - mu1) * g) / (|g| + eps).
        let cfg = NadamConfig::default();
        let w = Var::from_vec(vec![1.0f64], 1, &Device::Cpu).unwrap();
        let mut opt = Nadam::new(vec![w.clone()], cfg.clone()).unwrap();
        let loss = (w.as_tensor() * 3.0).unwrap().sum_all().unwrap(); // g = 3
        opt.step(&loss.backward().unwrap(), 0.01).unwrap();
        let mu = |t: f64| 0.9 * (1.0 - 0.5 * 0.96f64.powf(t * 0.004));
        let (mu1, mu2) = (mu(1.0), mu(2.0));
        let g = 3.0;
        let m_hat = mu2 / (1.0 - mu1 * mu2) * 0.1 * g + g;
        let v_hat = 0.001 * g * g / 0.001;
        let expected = 1.0 - 0.01 * m_hat / (v_hat.sqrt() + 1e-7);
        let got = w.as_tensor().to_vec1::<f64>().unwrap()[0];
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn minimizes_a_quadratic() {
        let w = Var::from_vec(vec![3.0f64, -2.0], 2, &Device::Cpu).unwrap();
        let mut opt = Nadam::new(vec![w.clone()], NadamConfig::default()).unwrap();
        for _ in 0..2000 {
            let loss = w.as_tensor().sqr().unwrap().sum_all().unwrap();
            opt.step(&loss.backward().unwrap(), 0.05).unwrap();
        }
        let v = w.as_tensor().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-2), "{v:?}");
    }
}
