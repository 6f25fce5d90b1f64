//! Domain values shared between the conformal, routing and metrics layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on probability vectors summing to one.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Binary toxicity label. Serialized as `0` (non-toxic) / `1` (toxic).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    NonToxic,
    Toxic,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::NonToxic, Label::Toxic];

    pub fn from_bit(bit: u8) -> Option<Label> {
        match bit {
            0 => Some(Label::NonToxic),
            1 => Some(Label::Toxic),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::NonToxic => 0,
            Label::Toxic => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::NonToxic => "nontoxic",
            Label::Toxic => "toxic",
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.bit()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Label::from_bit(v).ok_or_else(|| format!("label must be 0 or 1, got {v}"))
    }
}

/// Classifier output over the binary alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProbs {
    pub p_toxic: f64,
    pub p_nontoxic: f64,
}

impl ClassProbs {
    /// Validates a probability pair. Pairs whose sum deviates from one by less
    /// than [`PROB_SUM_TOLERANCE`] are renormalized; larger deviations are rejected.
    pub fn new(p_toxic: f64, p_nontoxic: f64) -> Result<Self> {
        let in_unit = |p: f64| p.is_finite() && (0.0..=1.0).contains(&p);
        if !in_unit(p_toxic) || !in_unit(p_nontoxic) {
            return Err(Error::InvalidProbability {
                row: None,
                reason: format!("probabilities ({p_toxic}, {p_nontoxic}) outside [0, 1]"),
            });
        }
        let sum = p_toxic + p_nontoxic;
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::InvalidProbability {
                row: None,
                reason: format!("class probabilities sum to {sum}"),
            });
        }
        Ok(ClassProbs {
            p_toxic: p_toxic / sum,
            p_nontoxic: p_nontoxic / sum,
        })
    }

    /// Binary complement form: `p_nontoxic = 1 - p_toxic`.
    pub fn from_toxic(p_toxic: f64) -> Result<Self> {
        if !(p_toxic.is_finite() && (0.0..=1.0).contains(&p_toxic)) {
            return Err(Error::InvalidProbability {
                row: None,
                reason: format!("p_toxic {p_toxic} outside [0, 1]"),
            });
        }
        Ok(ClassProbs {
            p_toxic,
            p_nontoxic: 1.0 - p_toxic,
        })
    }

    pub fn prob(&self, label: Label) -> f64 {
        match label {
            Label::Toxic => self.p_toxic,
            Label::NonToxic => self.p_nontoxic,
        }
    }

    /// Hard prediction with the 0.5 decision threshold (ties go toxic).
    pub fn predicted(&self) -> Label {
        if self.p_toxic >= 0.5 {
            Label::Toxic
        } else {
            Label::NonToxic
        }
    }
}

/// A conformal prediction set over `{toxic, nontoxic}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(into = "Vec<Label>", from = "Vec<Label>")]
pub struct PredictionSet {
    toxic: bool,
    nontoxic: bool,
}

impl PredictionSet {
    pub const EMPTY: PredictionSet = PredictionSet {
        toxic: false,
        nontoxic: false,
    };
    pub const FULL: PredictionSet = PredictionSet {
        toxic: true,
        nontoxic: true,
    };

    pub fn singleton(label: Label) -> Self {
        let mut s = Self::EMPTY;
        s.insert(label);
        s
    }

    pub fn from_predicate(mut include: impl FnMut(Label) -> bool) -> Self {
        let mut s = Self::EMPTY;
        for label in Label::ALL {
            if include(label) {
                s.insert(label);
            }
        }
        s
    }

    pub fn insert(&mut self, label: Label) {
        match label {
            Label::Toxic => self.toxic = true,
            Label::NonToxic => self.nontoxic = true,
        }
    }

    pub fn contains(&self, label: Label) -> bool {
        match label {
            Label::Toxic => self.toxic,
            Label::NonToxic => self.nontoxic,
        }
    }

    pub fn len(&self) -> usize {
        usize::from(self.toxic) + usize::from(self.nontoxic)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Anything other than a singleton carries no confident label.
    pub fn is_uncertain(&self) -> bool {
        self.len() != 1
    }

    /// The label of a singleton set.
    pub fn single(&self) -> Option<Label> {
        match (self.toxic, self.nontoxic) {
            (true, false) => Some(Label::Toxic),
            (false, true) => Some(Label::NonToxic),
            _ => None,
        }
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        Label::ALL.into_iter().filter(|l| self.contains(*l))
    }
}

impl From<PredictionSet> for Vec<Label> {
    fn from(s: PredictionSet) -> Self {
        s.labels().collect()
    }
}

impl From<Vec<Label>> for PredictionSet {
    fn from(v: Vec<Label>) -> Self {
        PredictionSet::from_predicate(|l| v.contains(&l))
    }
}

/// Disagreement-regressor output for one comment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegOutput {
    pub d_hat: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

impl RegOutput {
    pub fn point(d_hat: f64) -> Self {
        RegOutput {
            d_hat,
            bin_probs: None,
            features: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_hat.is_finite() && (0.0..=1.0).contains(&self.d_hat)) {
            return Err(Error::Domain {
                value: self.d_hat,
                reason: "d_hat must lie in [0, 1]",
            });
        }
        if let Some(bins) = &self.bin_probs {
            validate_distribution(bins)?;
        }
        if let Some(f) = &self.features {
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::schema(None, "non-finite feature value"));
            }
        }
        Ok(())
    }

    /// Features for the residual model, falling back to `[d_hat]`.
    pub fn residual_features(&self) -> Vec<f64> {
        match &self.features {
            Some(f) => f.clone(),
            None => vec![self.d_hat],
        }
    }
}

/// Checks a bin distribution: at least two entries, non-negative, summing to one.
pub fn validate_distribution(probs: &[f64]) -> Result<()> {
    if probs.len() < 2 {
        return Err(Error::InvalidProbability {
            row: None,
            reason: format!("need at least 2 bins, got {}", probs.len()),
        });
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidProbability {
            row: None,
            reason: "bin probabilities must be finite and non-negative".into(),
        });
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(Error::InvalidProbability {
            row: None,
            reason: format!("bin probabilities sum to {sum}"),
        });
    }
    Ok(())
}

/// Centers of `bins` equal-width bins on `[0, 1]`: `(i + 0.5) / bins`.
pub fn bin_centers(bins: usize) -> Vec<f64> {
    (0..bins).map(|i| (i as f64 + 0.5) / bins as f64).collect()
}

/// Closed interval on the disagreement scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::Domain {
                value: lo,
                reason: "interval requires lo <= hi",
            });
        }
        Ok(Interval { lo, hi })
    }

    /// Builds `[lo, hi]` clipped to `[0, 1]`.
    pub fn clipped(lo: f64, hi: f64) -> Self {
        let lo = lo.clamp(0.0, 1.0);
        let hi = hi.clamp(0.0, 1.0);
        Interval { lo, hi: hi.max(lo) }
    }

    pub fn contains(&self, d: f64) -> bool {
        self.lo <= d && d <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Model outputs for one comment, as ingested or produced by a scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredInstance {
    pub id: String,
    pub probs: ClassProbs,
    pub reg: RegOutput,
}

/// A scored instance joined with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationItem {
    pub probs: ClassProbs,
    pub reg: RegOutput,
    pub label: Label,
    pub d: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_probs_renormalizes_small_deviation() {
        let p = ClassProbs::new(0.7, 0.3 + 5e-7).unwrap();
        assert!((p.p_toxic + p.p_nontoxic - 1.0).abs() < 1e-15);
        assert!(ClassProbs::new(0.7, 0.4).is_err());
        assert!(ClassProbs::new(-0.1, 1.1).is_err());
    }

    #[test]
    fn prediction_set_sizes() {
        assert!(PredictionSet::EMPTY.is_uncertain());
        assert!(PredictionSet::FULL.is_uncertain());
        let s = PredictionSet::singleton(Label::Toxic);
        assert!(!s.is_uncertain());
        assert_eq!(s.single(), Some(Label::Toxic));
        let json = serde_json::to_string(&PredictionSet::FULL).unwrap();
        assert_eq!(json, "[0,1]");
        let back: PredictionSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, PredictionSet::FULL);
    }

    #[test]
    fn interval_clipping() {
        let i = Interval::clipped(-0.2, 1.3);
        assert_eq!(i, Interval { lo: 0.0, hi: 1.0 });
        assert!(Interval::new(0.5, 0.4).is_err());
    }

    #[test]
    fn bin_distribution_checks() {
        assert!(validate_distribution(&[0.5, 0.5]).is_ok());
        assert!(validate_distribution(&[1.0]).is_err());
        assert!(validate_distribution(&[0.4, 0.4]).is_err());
        assert_eq!(bin_centers(2), vec![0.25, 0.75]);
    }
}
