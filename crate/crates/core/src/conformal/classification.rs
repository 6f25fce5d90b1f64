//! Prediction sets for the binary toxicity classifier.
//!
//! All three methods share the conformity score `1 - p(y; x)`:
//!
//! * LAC keeps every label whose score is at most the corrected quantile `q`.
//! * Class-conditional LAC computes one quantile per true class and keeps a
//!   label when its score is within that label's quantile. Membership is
//!   written on the score, not on the raw probability.
//! * Conformal risk control picks the largest probability threshold `lambda`
//!   whose inflated empirical false-negative rate `(n * FNR + 1) / (n + 1)`
//!   stays within `alpha`, and keeps labels with `p(y; x) >= lambda`.

use serde::{Deserialize, Serialize};

use super::quantile::{check_alpha, conformal_quantile};
use crate::error::{Error, Result};
use crate::serde_ext::extended_f64;
use crate::types::{CalibrationItem, ClassProbs, Label, PredictionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassMethod {
    Lac,
    Cclac,
    Crc,
}

impl ClassMethod {
    pub const ALL: [ClassMethod; 3] = [ClassMethod::Lac, ClassMethod::Cclac, ClassMethod::Crc];

    pub fn name(self) -> &'static str {
        match self {
            ClassMethod::Lac => "lac",
            ClassMethod::Cclac => "cclac",
            ClassMethod::Crc => "crc",
        }
    }
}

impl std::str::FromStr for ClassMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lac" => Ok(ClassMethod::Lac),
            "cclac" => Ok(ClassMethod::Cclac),
            "crc" => Ok(ClassMethod::Crc),
            other => Err(Error::Config(format!("unknown classification method `{other}`"))),
        }
    }
}

/// Method-specific frozen state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ClassRule {
    Lac {
        #[serde(with = "extended_f64")]
        q_hat: f64,
    },
    Cclac {
        #[serde(with = "extended_f64")]
        q_toxic: f64,
        #[serde(with = "extended_f64")]
        q_nontoxic: f64,
    },
    Crc { lambda_hat: f64 },
}

/// Frozen classification calibration. Recalibration builds a new value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCalibration {
    pub alpha: f64,
    pub n_cal: usize,
    #[serde(flatten)]
    pub rule: ClassRule,
}

/// LAC conformity score of `label` under `probs`.
pub fn nonconformity(probs: &ClassProbs, label: Label) -> f64 {
    1.0 - probs.prob(label)
}

fn non_empty<T>(cal: &[T]) -> Result<()> {
    if cal.is_empty() {
        Err(Error::EmptyCalibration)
    } else {
        Ok(())
    }
}

pub fn calibrate_lac(cal: &[(ClassProbs, Label)], alpha: f64) -> Result<ClassCalibration> {
    check_alpha(alpha)?;
    non_empty(cal)?;
    let scores: Vec<f64> = cal.iter().map(|(p, y)| nonconformity(p, *y)).collect();
    Ok(ClassCalibration {
        alpha,
        n_cal: cal.len(),
        rule: ClassRule::Lac {
            q_hat: conformal_quantile(&scores, alpha)?,
        },
    })
}

pub fn calibrate_cclac(cal: &[(ClassProbs, Label)], alpha: f64) -> Result<ClassCalibration> {
    check_alpha(alpha)?;
    non_empty(cal)?;
    let class_quantile = |label: Label| -> Result<f64> {
        let scores: Vec<f64> = cal
            .iter()
            .filter(|(_, y)| *y == label)
            .map(|(p, y)| nonconformity(p, *y))
            .collect();
        if scores.is_empty() {
            return Err(Error::MissingClass(label.name()));
        }
        conformal_quantile(&scores, alpha)
    };
    Ok(ClassCalibration {
        alpha,
        n_cal: cal.len(),
        rule: ClassRule::Cclac {
            q_toxic: class_quantile(Label::Toxic)?,
            q_nontoxic: class_quantile(Label::NonToxic)?,
        },
    })
}

pub fn calibrate_crc(cal: &[(ClassProbs, Label)], alpha: f64) -> Result<ClassCalibration> {
    check_alpha(alpha)?;
    non_empty(cal)?;
    let n = cal.len();

    let mut p_true: Vec<f64> = cal.iter().map(|(p, y)| p.prob(*y)).collect();
    p_true.sort_by(f64::total_cmp);

    // The empirical FNR only changes at observed probabilities.
    let mut grid: Vec<f64> = cal
        .iter()
        .flat_map(|(p, _)| [p.p_toxic, p.p_nontoxic])
        .chain([0.0, 1.0])
        .collect();
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();

    let budget = alpha * (n as f64 + 1.0);
    for lambda in grid {
        let misses = p_true.partition_point(|p| *p < lambda);
        if (misses + 1) as f64 <= budget + 1e-12 {
            return Ok(ClassCalibration {
                alpha,
                n_cal: n,
                rule: ClassRule::Crc { lambda_hat: lambda },
            });
        }
    }
    Err(Error::InfeasibleRisk { alpha, n })
}

fn mismatch(expected: ClassMethod, found: ClassMethod) -> Error {
    Error::CalibrationMismatch {
        expected: expected.name(),
        found: found.name(),
    }
}

pub fn predict_set_lac(calib: &ClassCalibration, probs: &ClassProbs) -> Result<PredictionSet> {
    match calib.rule {
        ClassRule::Lac { q_hat } => Ok(PredictionSet::from_predicate(|y| nonconformity(probs, y) <= q_hat)),
        _ => Err(mismatch(ClassMethod::Lac, calib.method())),
    }
}

pub fn predict_set_cclac(calib: &ClassCalibration, probs: &ClassProbs) -> Result<PredictionSet> {
    match calib.rule {
        ClassRule::Cclac { q_toxic, q_nontoxic } => Ok(PredictionSet::from_predicate(|y| {
            let q = match y {
                Label::Toxic => q_toxic,
                Label::NonToxic => q_nontoxic,
            };
            nonconformity(probs, y) <= q
        })),
        _ => Err(mismatch(ClassMethod::Cclac, calib.method())),
    }
}

pub fn predict_set_crc(calib: &ClassCalibration, probs: &ClassProbs) -> Result<PredictionSet> {
    match calib.rule {
        ClassRule::Crc { lambda_hat } => Ok(PredictionSet::from_predicate(|y| probs.prob(y) >= lambda_hat)),
        _ => Err(mismatch(ClassMethod::Crc, calib.method())),
    }
}

impl ClassCalibration {
    pub fn calibrate(method: ClassMethod, cal: &[(ClassProbs, Label)], alpha: f64) -> Result<Self> {
        match method {
            ClassMethod::Lac => calibrate_lac(cal, alpha),
            ClassMethod::Cclac => calibrate_cclac(cal, alpha),
            ClassMethod::Crc => calibrate_crc(cal, alpha),
        }
    }

    pub fn calibrate_items(method: ClassMethod, items: &[CalibrationItem], alpha: f64) -> Result<Self> {
        let pairs: Vec<(ClassProbs, Label)> = items.iter().map(|i| (i.probs, i.label)).collect();
        Self::calibrate(method, &pairs, alpha)
    }

    pub fn method(&self) -> ClassMethod {
        match self.rule {
            ClassRule::Lac { .. } => ClassMethod::Lac,
            ClassRule::Cclac { .. } => ClassMethod::Cclac,
            ClassRule::Crc { .. } => ClassMethod::Crc,
        }
    }

    pub fn predict_set(&self, probs: &ClassProbs) -> PredictionSet {
        let r = match self.method() {
            ClassMethod::Lac => predict_set_lac(self, probs),
            ClassMethod::Cclac => predict_set_cclac(self, probs),
            ClassMethod::Crc => predict_set_crc(self, probs),
        };
        r.expect("dispatch matches the calibrated method")
    }
}
