//! Annotator votes to majority labels and disagreement scores.
//!
//! The disagreement of a comment is derived from the mean vote `a` (the share
//! of annotators calling it toxic). Two measures are supported:
//!
//! * distance: `1 - 2|a - 0.5|`, linear in the distance from an even split;
//! * entropy: the binary entropy of `a` in bits.
//!
//! Both are 0 for unanimous votes and 1 for a 50/50 split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Label;

/// Default minimum number of annotators per comment.
pub const DEFAULT_MIN_ANNOTATORS: usize = 10;

/// Raw votes for one comment (`1` = toxic, `0` = non-toxic).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub votes: Vec<u8>,
}

impl AnnotationRecord {
    pub fn new(id: impl Into<String>, votes: Vec<u8>) -> Self {
        AnnotationRecord {
            id: id.into(),
            text: None,
            votes,
        }
    }
}

/// Ground truth derived from an [`AnnotationRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub id: String,
    pub y: Label,
    pub a_mean: f64,
    pub d: f64,
    pub annotator_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisagreementMethod {
    #[default]
    Distance,
    Entropy,
}

impl DisagreementMethod {
    pub fn apply(self, a_mean: f64) -> Result<f64> {
        match self {
            DisagreementMethod::Distance => disagreement_distance(a_mean),
            DisagreementMethod::Entropy => disagreement_entropy(a_mean),
        }
    }
}

impl std::str::FromStr for DisagreementMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "distance" => Ok(DisagreementMethod::Distance),
            "entropy" => Ok(DisagreementMethod::Entropy),
            other => Err(Error::Config(format!("unknown disagreement method `{other}`"))),
        }
    }
}

fn check_unit(a_mean: f64) -> Result<()> {
    if a_mean.is_finite() && (0.0..=1.0).contains(&a_mean) {
        Ok(())
    } else {
        Err(Error::Domain {
            value: a_mean,
            reason: "mean annotation must lie in [0, 1]",
        })
    }
}

/// Fraction of annotators who voted toxic.
pub fn mean_annotation(record: &AnnotationRecord) -> Result<f64> {
    if record.votes.is_empty() {
        return Err(Error::EmptyAnnotations);
    }
    let toxic = record.votes.iter().filter(|v| **v == 1).count();
    Ok(toxic as f64 / record.votes.len() as f64)
}

/// Majority vote; an exact tie resolves to toxic.
pub fn majority_label(record: &AnnotationRecord) -> Result<Label> {
    if record.votes.is_empty() {
        return Err(Error::EmptyAnnotations);
    }
    // Integer comparison avoids rounding at the tie point.
    let toxic = record.votes.iter().filter(|v| **v == 1).count();
    if 2 * toxic >= record.votes.len() {
        Ok(Label::Toxic)
    } else {
        Ok(Label::NonToxic)
    }
}

pub fn disagreement_distance(a_mean: f64) -> Result<f64> {
    check_unit(a_mean)?;
    Ok(1.0 - 2.0 * (a_mean - 0.5).abs())
}

/// Binary entropy in bits, with `0 log 0 = 0`.
pub fn disagreement_entropy(a_mean: f64) -> Result<f64> {
    check_unit(a_mean)?;
    let term = |p: f64| if p <= 0.0 { 0.0 } else { -p * p.log2() };
    Ok(term(a_mean) + term(1.0 - a_mean))
}

/// Keeps records with at least `k` votes, preserving order.
pub fn filter_min_annotators(records: Vec<AnnotationRecord>, k: usize) -> Vec<AnnotationRecord> {
    records.into_iter().filter(|r| r.votes.len() >= k).collect()
}

pub fn build_labeled(record: &AnnotationRecord, method: DisagreementMethod) -> Result<LabeledInstance> {
    let a_mean = mean_annotation(record)?;
    Ok(LabeledInstance {
        id: record.id.clone(),
        y: majority_label(record)?,
        a_mean,
        d: method.apply(a_mean)?,
        annotator_count: record.votes.len(),
    })
}
