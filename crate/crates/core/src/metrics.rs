//! Evaluation metrics for the classifier, the disagreement regressor and the
//! review process built on top of them.
//!
//! Review-efficiency metrics:
//!
//! * MURE: precision of uncertainty flags, `TP / (TP + FP)` over records whose
//!   prediction set is not a singleton, where TP means the point prediction
//!   was wrong.
//! * CARE: recall of ambiguity flags, over records with `d >= gamma`, where a
//!   record is flagged when its interval upper bound reaches `gamma`.
//! * R-F1: harmonic mean of MURE and CARE.
//! * r_pb: point-biserial correlation between a binary flag and `d`, oriented
//!   so that flagged records with higher disagreement give a positive value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Interval, Label, PredictionSet};

/// Confidence bins for ECE and ACE.
pub const CALIBRATION_BINS: usize = 15;
const LOG_CLAMP: f64 = 1e-12;

/// Per-comment evaluation tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub y: Label,
    pub y_hat: Label,
    pub p_toxic: f64,
    pub set: PredictionSet,
    pub d: f64,
    pub d_hat: f64,
    pub interval: Interval,
}

impl EvalRecord {
    pub fn uncertain(&self) -> bool {
        self.set.is_uncertain()
    }

    pub fn predicted_ambiguous(&self, gamma: f64) -> bool {
        self.interval.hi >= gamma
    }

    pub fn truly_ambiguous(&self, gamma: f64) -> bool {
        self.d >= gamma
    }
}

/// A metric value, or the reason it is undefined. A defined value may carry
/// a note (e.g. distance-to-interval with nothing outside its interval).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Metric {
    pub fn defined(v: f64) -> Self {
        Metric { value: Some(v), note: None }
    }

    pub fn undefined(reason: impl Into<String>) -> Self {
        Metric {
            value: None,
            note: Some(reason.into()),
        }
    }

    pub fn is_defined(&self) -> bool {
        self.value.is_some()
    }
}

impl From<Result<f64>> for Metric {
    fn from(r: Result<f64>) -> Self {
        match r {
            Ok(v) => Metric::defined(v),
            Err(Error::UndefinedMetric { reason, .. }) => Metric::undefined(reason),
            Err(e) => Metric::undefined(e.to_string()),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.value, &self.note) {
            (Some(v), None) => write!(f, "{v:.4}"),
            (Some(v), Some(n)) => write!(f, "{v:.4} ({n})"),
            (None, Some(n)) => write!(f, "undefined ({n})"),
            (None, None) => write!(f, "undefined"),
        }
    }
}

fn non_empty(records: &[EvalRecord]) -> Result<()> {
    if records.is_empty() {
        Err(Error::EmptyDataset)
    } else {
        Ok(())
    }
}

pub fn mure(records: &[EvalRecord]) -> Result<f64> {
    let (mut tp, mut fp) = (0usize, 0usize);
    for r in records.iter().filter(|r| r.uncertain()) {
        if r.y != r.y_hat {
            tp += 1;
        } else {
            fp += 1;
        }
    }
    if tp + fp == 0 {
        return Err(Error::UndefinedMetric {
            metric: "mure",
            reason: "no records flagged uncertain",
        });
    }
    Ok(tp as f64 / (tp + fp) as f64)
}

pub fn care(records: &[EvalRecord], gamma: f64) -> Result<f64> {
    let (mut tp, mut fn_) = (0usize, 0usize);
    for r in records.iter().filter(|r| r.truly_ambiguous(gamma)) {
        if r.predicted_ambiguous(gamma) {
            tp += 1;
        } else {
            fn_ += 1;
        }
    }
    if tp + fn_ == 0 {
        return Err(Error::UndefinedMetric {
            metric: "care",
            reason: "no truly ambiguous records",
        });
    }
    Ok(tp as f64 / (tp + fn_) as f64)
}

/// Harmonic mean of MURE and CARE; 0 when both are 0.
pub fn review_f1(mure: f64, care: f64) -> f64 {
    if mure + care == 0.0 {
        0.0
    } else {
        2.0 * mure * care / (mure + care)
    }
}

/// `(M1 - M0) / sigma(d) * sqrt(n1 n0 / n^2)` with population sigma.
pub fn point_biserial(flags: &[bool], d_values: &[f64]) -> Result<f64> {
    if flags.len() != d_values.len() {
        return Err(Error::schema(None, "flags and disagreement values differ in length"));
    }
    let n = d_values.len() as f64;
    let n1 = flags.iter().filter(|f| **f).count();
    let n0 = flags.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::UndefinedMetric {
            metric: "r_pb",
            reason: "one flag group is empty",
        });
    }
    let mean = d_values.iter().sum::<f64>() / n;
    let var = d_values.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::UndefinedMetric {
            metric: "r_pb",
            reason: "disagreement has zero variance",
        });
    }
    let group_mean = |flag: bool, count: usize| {
        flags
            .iter()
            .zip(d_values)
            .filter(|(f, _)| **f == flag)
            .map(|(_, d)| d)
            .sum::<f64>()
            / count as f64
    };
    let (m1, m0) = (group_mean(true, n1), group_mean(false, n0));
    Ok((m1 - m0) / var.sqrt() * ((n1 as f64 * n0 as f64) / (n * n)).sqrt())
}

/// Pearson correlation; undefined when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::schema(None, "pearson needs two equal-length non-empty samples"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedMetric {
            metric: "pearson",
            reason: "zero variance",
        });
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// F1 of the toxic class over `(truth, prediction)` pairs.
fn f1_score(pairs: impl Iterator<Item = (Label, Label)>, metric: &'static str) -> Result<f64> {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (y, y_hat) in pairs {
        match (y, y_hat) {
            (Label::Toxic, Label::Toxic) => tp += 1,
            (Label::NonToxic, Label::Toxic) => fp += 1,
            (Label::Toxic, Label::NonToxic) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        return Err(Error::UndefinedMetric {
            metric,
            reason: "no toxic labels or predictions",
        });
    }
    Ok(2.0 * tp as f64 / denom as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub f1: Metric,
    pub log_loss: f64,
    pub ece: f64,
    pub ace: f64,
}

/// Confidence in the predicted label and whether that label was right.
fn confidence_and_hit(r: &EvalRecord) -> (f64, bool) {
    let conf = match r.y_hat {
        Label::Toxic => r.p_toxic,
        Label::NonToxic => 1.0 - r.p_toxic,
    };
    (conf, r.y == r.y_hat)
}

/// Mass-weighted mean `|accuracy - confidence|` over the given groups.
fn binned_gap<'a>(groups: impl Iterator<Item = &'a [(f64, bool)]>, n: usize) -> f64 {
    groups
        .filter(|g| !g.is_empty())
        .map(|g| {
            let m = g.len() as f64;
            let acc = g.iter().filter(|(_, hit)| *hit).count() as f64 / m;
            let conf = g.iter().map(|(c, _)| c).sum::<f64>() / m;
            m / n as f64 * (acc - conf).abs()
        })
        .sum()
}

/// Expected calibration error with equal-width confidence bins.
pub fn expected_calibration_error(records: &[EvalRecord], bins: usize) -> Result<f64> {
    non_empty(records)?;
    let mut grouped: Vec<Vec<(f64, bool)>> = vec![Vec::new(); bins];
    for r in records {
        let (c, hit) = confidence_and_hit(r);
        let b = ((c * bins as f64).floor() as usize).min(bins - 1);
        grouped[b].push((c, hit));
    }
    Ok(binned_gap(grouped.iter().map(Vec::as_slice), records.len()))
}

/// Adaptive calibration error: equal-mass bins over sorted confidences.
pub fn adaptive_calibration_error(records: &[EvalRecord], bins: usize) -> Result<f64> {
    non_empty(records)?;
    let mut pts: Vec<(f64, bool)> = records.iter().map(confidence_and_hit).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pts.len();
    let groups = (0..bins).map(|b| &pts[b * n / bins..(b + 1) * n / bins]);
    Ok(binned_gap(groups, n))
}

pub fn classification_metrics(records: &[EvalRecord]) -> Result<ClassificationMetrics> {
    non_empty(records)?;
    let log_loss = records
        .iter()
        .map(|r| {
            let p = r.p_toxic.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
            match r.y {
                Label::Toxic => -p.ln(),
                Label::NonToxic => -(1.0 - p).ln(),
            }
        })
        .sum::<f64>()
        / records.len() as f64;
    Ok(ClassificationMetrics {
        f1: f1_score(records.iter().map(|r| (r.y, r.y_hat)), "f1").into(),
        log_loss,
        ece: expected_calibration_error(records, CALIBRATION_BINS)?,
        ace: adaptive_calibration_error(records, CALIBRATION_BINS)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub marginal_coverage: f64,
    pub certainty_f1: Metric,
    pub mean_set_size: f64,
}

pub fn set_metrics(records: &[EvalRecord]) -> Result<SetMetrics> {
    non_empty(records)?;
    let n = records.len() as f64;
    let covered = records.iter().filter(|r| r.set.contains(r.y)).count();
    let certain = records.iter().filter_map(|r| r.set.single().map(|l| (r.y, l)));
    let certainty_f1 = if records.iter().all(|r| r.uncertain()) {
        Metric::undefined("no certain prediction sets")
    } else {
        f1_score(certain, "certainty_f1").into()
    };
    Ok(SetMetrics {
        marginal_coverage: covered as f64 / n,
        certainty_f1,
        mean_set_size: records.iter().map(|r| r.set.len() as f64).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub icp: f64,
    pub mean_interval_size: f64,
    pub di: Metric,
    pub r_interval_d: Metric,
}

/// Distance from `d` to the nearest interval endpoint.
fn distance_outside(interval: &Interval, d: f64) -> f64 {
    (d - interval.lo).abs().min((d - interval.hi).abs())
}

pub fn interval_metrics(records: &[EvalRecord]) -> Result<IntervalMetrics> {
    non_empty(records)?;
    let n = records.len() as f64;
    let covered = records.iter().filter(|r| r.interval.contains(r.d)).count();
    let outside: Vec<f64> = records
        .iter()
        .filter(|r| !r.interval.contains(r.d))
        .map(|r| distance_outside(&r.interval, r.d))
        .collect();
    let di = if outside.is_empty() {
        Metric {
            value: Some(0.0),
            note: Some("no record outside its interval".into()),
        }
    } else {
        Metric::defined(outside.iter().sum::<f64>() / outside.len() as f64)
    };
    let widths: Vec<f64> = records.iter().map(|r| r.interval.width()).collect();
    let d: Vec<f64> = records.iter().map(|r| r.d).collect();
    Ok(IntervalMetrics {
        icp: covered as f64 / n,
        mean_interval_size: widths.iter().sum::<f64>() / n,
        di,
        r_interval_d: pearson(&widths, &d).into(),
    })
}

pub fn regression_metrics(records: &[EvalRecord]) -> Result<(f64, f64)> {
    non_empty(records)?;
    let n = records.len() as f64;
    let mae = records.iter().map(|r| (r.d - r.d_hat).abs()).sum::<f64>() / n;
    let mse = records.iter().map(|r| (r.d - r.d_hat).powi(2)).sum::<f64>() / n;
    Ok((mae, mse))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAtTpr {
    /// Records are flagged when `interval.hi >= threshold`.
    pub threshold: f64,
    pub tpr: f64,
    /// `None` when there are no negatives.
    pub fpr: Option<f64>,
}

/// Largest flagging threshold on interval upper bounds whose TPR against
/// `d >= gamma` reaches `target_tpr`, and the FPR there.
pub fn threshold_at_tpr(records: &[EvalRecord], target_tpr: f64, gamma: f64) -> Result<ThresholdAtTpr> {
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(Error::Domain {
            value: target_tpr,
            reason: "target TPR must lie in (0, 1]",
        });
    }
    let positives = records.iter().filter(|r| r.truly_ambiguous(gamma)).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric {
            metric: "fpr_at_tpr",
            reason: "no truly ambiguous records",
        });
    }
    let negatives = records.len() - positives;

    let mut candidates: Vec<f64> = records.iter().map(|r| r.interval.hi).chain([0.0]).collect();
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.dedup();

    for t in candidates {
        let tp = records
            .iter()
            .filter(|r| r.truly_ambiguous(gamma) && r.interval.hi >= t)
            .count();
        let tpr = tp as f64 / positives as f64;
        if tpr >= target_tpr - 1e-12 {
            let fp = records
                .iter()
                .filter(|r| !r.truly_ambiguous(gamma) && r.interval.hi >= t)
                .count();
            return Ok(ThresholdAtTpr {
                threshold: t,
                tpr,
                fpr: (negatives > 0).then(|| fp as f64 / negatives as f64),
            });
        }
    }
    Err(Error::UnreachableTarget { target: target_tpr })
}

/// Every evaluation metric for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub target_tpr: f64,
    pub f1: Metric,
    pub log_loss: Metric,
    pub ece: Metric,
    pub ace: Metric,
    pub marginal_coverage: Metric,
    pub certainty_f1: Metric,
    pub mean_set_size: Metric,
    pub mure: Metric,
    pub care: Metric,
    pub review_f1: Metric,
    /// Review flag (uncertain or ambiguous) against disagreement.
    pub r_pb: Metric,
    pub r_pb_uncertain: Metric,
    pub r_pb_ambiguous: Metric,
    pub mae: Metric,
    pub mse: Metric,
    pub icp: Metric,
    pub mean_interval_size: Metric,
    pub di: Metric,
    pub r_interval_d: Metric,
    pub fpr_at_tpr: Metric,
    pub tpr_threshold: Metric,
}

impl MetricsReport {
    pub fn compute(records: &[EvalRecord], gamma: f64, alpha: f64, target_tpr: f64) -> Result<Self> {
        non_empty(records)?;
        let cls = classification_metrics(records)?;
        let sets = set_metrics(records)?;
        let ivs = interval_metrics(records)?;
        let (mae, mse) = regression_metrics(records)?;
        let mure_v = mure(records);
        let care_v = care(records, gamma);
        let review = match (&mure_v, &care_v) {
            (Ok(m), Ok(c)) => Metric::defined(review_f1(*m, *c)),
            _ => Metric::undefined("requires both MURE and CARE"),
        };
        let d: Vec<f64> = records.iter().map(|r| r.d).collect();
        let flags = |f: &dyn Fn(&EvalRecord) -> bool| records.iter().map(f).collect::<Vec<bool>>();
        let uncertain = flags(&|r| r.uncertain());
        let ambiguous = flags(&|r| r.predicted_ambiguous(gamma));
        let review_flag = flags(&|r| r.uncertain() || r.predicted_ambiguous(gamma));
        let (fpr_at_tpr, tpr_threshold) = match threshold_at_tpr(records, target_tpr, gamma) {
            Ok(t) => (
                t.fpr.map(Metric::defined).unwrap_or_else(|| Metric::undefined("no negatives")),
                Metric::defined(t.threshold),
            ),
            Err(e) => (Metric::from(Err(e.clone())), Metric::from(Err(e))),
        };
        Ok(MetricsReport {
            n: records.len(),
            alpha,
            gamma,
            target_tpr,
            f1: cls.f1,
            log_loss: Metric::defined(cls.log_loss),
            ece: Metric::defined(cls.ece),
            ace: Metric::defined(cls.ace),
            marginal_coverage: Metric::defined(sets.marginal_coverage),
            certainty_f1: sets.certainty_f1,
            mean_set_size: Metric::defined(sets.mean_set_size),
            mure: mure_v.into(),
            care: care_v.into(),
            review_f1: review,
            r_pb: point_biserial(&review_flag, &d).into(),
            r_pb_uncertain: point_biserial(&uncertain, &d).into(),
            r_pb_ambiguous: point_biserial(&ambiguous, &d).into(),
            mae: Metric::defined(mae),
            mse: Metric::defined(mse),
            icp: Metric::defined(ivs.icp),
            mean_interval_size: Metric::defined(ivs.mean_interval_size),
            di: ivs.di,
            r_interval_d: ivs.r_interval_d,
            fpr_at_tpr,
            tpr_threshold,
        })
    }

    /// `(name, metric)` pairs in display order.
    pub fn entries(&self) -> Vec<(&'static str, &Metric)> {
        vec![
            ("f1", &self.f1),
            ("log_loss", &self.log_loss),
            ("ece", &self.ece),
            ("ace", &self.ace),
            ("marginal_coverage", &self.marginal_coverage),
            ("certainty_f1", &self.certainty_f1),
            ("mean_set_size", &self.mean_set_size),
            ("mure", &self.mure),
            ("care", &self.care),
            ("review_f1", &self.review_f1),
            ("r_pb", &self.r_pb),
            ("r_pb_uncertain", &self.r_pb_uncertain),
            ("r_pb_ambiguous", &self.r_pb_ambiguous),
            ("mae", &self.mae),
            ("mse", &self.mse),
            ("icp", &self.icp),
            ("mean_interval_size", &self.mean_interval_size),
            ("di", &self.di),
            ("r_interval_d", &self.r_interval_d),
            ("fpr_at_tpr", &self.fpr_at_tpr),
            ("tpr_threshold", &self.tpr_threshold),
        ]
    }

    /// Plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "n = {}  alpha = {}  gamma = {}  target TPR = {}\n",
            self.n, self.alpha, self.gamma, self.target_tpr
        );
        for (name, m) in self.entries() {
            out.push_str(&format!("{name:<20} {m}\n"));
        }
        out
    }
}
