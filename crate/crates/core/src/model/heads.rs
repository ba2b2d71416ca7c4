use std::fmt;
use std::str::FromStr;

use candle_core::{Module, Tensor};
use candle_nn::{Init, Linear, VarBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::NUM_PATHOLOGIES;

/// Width of the hidden layer feeding the age regressor.
pub const INTERMEDIATE_DIM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// 14 pathology outputs.
    Chexnet,
    /// 14 pathologies, gender and view position, and age.
    Metachexnet,
    /// Single tuberculosis output.
    Tb,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Chexnet => "chexnet",
            Variant::Metachexnet => "metachexnet",
            Variant::Tb => "tb",
        }
    }

    /// Number of scalar outputs per image.
    pub fn output_arity(self) -> usize {
        match self {
            Variant::Chexnet => NUM_PATHOLOGIES,
            Variant::Metachexnet => NUM_PATHOLOGIES + 2 + 1,
            Variant::Tb => 1,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chexnet" => Ok(Variant::Chexnet),
            "metachexnet" => Ok(Variant::Metachexnet),
            "tb" => Ok(Variant::Tb),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Closed-form parameter counts (weights + biases) per head for a feature
/// width `d`, in registration order.
pub fn head_parameter_counts(variant: Variant, d: usize) -> Vec<(&'static str, usize)> {
    match variant {
        Variant::Chexnet => vec![("pathology", (d + 1) * NUM_PATHOLOGIES)],
        Variant::Metachexnet => vec![
            ("pathology", (d + 1) * NUM_PATHOLOGIES),
            ("meta", (d + 1) * 2),
            ("intermediate", (d + 1) * INTERMEDIATE_DIM),
            ("age", INTERMEDIATE_DIM + 1),
        ],
        Variant::Tb => vec![("tb", d + 1)],
    }
}

/// Sigmoid outputs of a head set for one batch. Fields absent from the
/// variant are `None`.
#[derive(Debug, Clone)]
pub struct HeadOutputs {
    /// `(batch, 14)`
    pub pathology: Option<Tensor>,
    /// `(batch, 2)`: gender (male) then position (PA).
    pub meta: Option<Tensor>,
    /// `(batch, 1)` on the scaled-age axis.
    pub age: Option<Tensor>,
    /// `(batch, 1)`
    pub tb: Option<Tensor>,
}

/// The fully connected heads sitting on the pooled feature vector.
pub struct HeadSet {
    variant: Variant,
    feature_dim: usize,
    pathology: Option<Linear>,
    meta: Option<Linear>,
    intermediate: Option<Linear>,
    age: Option<Linear>,
    tb: Option<Linear>,
}

fn linear(in_dim: usize, out_dim: usize, vb: VarBuilder) -> candle_core::Result<Linear> {
    // Real initial values are written by the seeded initializer.
    let w = vb.get_with_hints((out_dim, in_dim), "weight", Init::Const(0.0))?;
    let b = vb.get_with_hints(out_dim, "bias", Init::Const(0.0))?;
    Ok(Linear::new(w, Some(b)))
}

impl HeadSet {
    /// Register the heads for `variant` under `vb` (conventionally the
    /// `heads` prefix).
    pub fn new(variant: Variant, feature_dim: usize, vb: VarBuilder) -> Result<Self> {
        let mut h = HeadSet {
            variant,
            feature_dim,
            pathology: None,
            meta: None,
            intermediate: None,
            age: None,
            tb: None,
        };
        match variant {
            Variant::Chexnet => {
                h.pathology = Some(linear(feature_dim, NUM_PATHOLOGIES, vb.pp("pathology"))?);
            }
            Variant::Metachexnet => {
                h.pathology = Some(linear(feature_dim, NUM_PATHOLOGIES, vb.pp("pathology"))?);
                h.meta = Some(linear(feature_dim, 2, vb.pp("meta"))?);
                h.intermediate = Some(linear(feature_dim, INTERMEDIATE_DIM, vb.pp("intermediate"))?);
                h.age = Some(linear(INTERMEDIATE_DIM, 1, vb.pp("age"))?);
            }
            Variant::Tb => {
                h.tb = Some(linear(feature_dim, 1, vb.pp("tb"))?);
            }
        }
        Ok(h)
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn forward(&self, features: &Tensor) -> Result<HeadOutputs> {
        let width = features.dim(1)?;
        if width != self.feature_dim {
            return Err(Error::Shape(format!(
                "heads expect {} features, got {width}",
                self.feature_dim
            )));
        }
        let sig = |l: &Option<Linear>, x: &Tensor| -> candle_core::Result<Option<Tensor>> {
            l.as_ref().map(|l| candle_nn::ops::sigmoid(&l.forward(x)?)).transpose()
        };
        let age = match (&self.intermediate, &self.age) {
            (Some(mid), Some(age)) => {
                let hidden = mid.forward(features)?.relu()?;
                Some(candle_nn::ops::sigmoid(&age.forward(&hidden)?)?)
            }
            _ => None,
        };
        Ok(HeadOutputs {
            pathology: sig(&self.pathology, features)?,
            meta: sig(&self.meta, features)?,
            age,
            tb: sig(&self.tb, features)?,
        })
    }

    /// Parameter count per named head, in registration order.
    pub fn parameter_counts(&self) -> Vec<(&'static str, usize)> {
        let count = |l: &Linear| l.weight().elem_count() + l.bias().map_or(0, |b| b.elem_count());
        [
            ("pathology", &self.pathology),
            ("meta", &self.meta),
            ("intermediate", &self.intermediate),
            ("age", &self.age),
            ("tb", &self.tb),
        ]
        .into_iter()
        .filter_map(|(name, l)| l.as_ref().map(|l| (name, count(l))))
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use candle_nn::VarMap;

    #[test]
    fn arity_and_counts() {
        let d = 24;
        for (variant, expected) in [
            (Variant::Chexnet, vec![("pathology", d * 14 + 14)]),
            (
                Variant::Metachexnet,
                vec![
                    ("pathology", d * 14 + 14),
                    ("meta", d * 2 + 2),
                    ("intermediate", d * 10 + 10),
                    ("age", 10 + 1),
                ],
            ),
            (Variant::Tb, vec![("tb", d + 1)]),
        ] {
            let vm = VarMap::new();
            let heads = HeadSet::new(variant, d, VarBuilder::from_varmap(&vm, DType::F64, &Device::Cpu)).unwrap();
            assert_eq!(heads.parameter_counts(), expected);
        }
        assert_eq!(Variant::Metachexnet.output_arity(), 17);
    }

    #[test]
    fn wrong_feature_width_is_rejected() {
        let vm = VarMap::new();
        let heads = HeadSet::new(Variant::Tb, 8, VarBuilder::from_varmap(&vm, DType::F32, &Device::Cpu)).unwrap();
        let x = Tensor::zeros((2, 9), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(heads.forward(&x), Err(Error::Shape(_))));
    }
}
