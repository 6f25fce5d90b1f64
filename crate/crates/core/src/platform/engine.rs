//! Calibrated moderation state and the operations run against it.

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::annotations::{DisagreementMethod, LabeledInstance, DEFAULT_MIN_ANNOTATORS};
use crate::conformal::{ClassCalibration, ClassMethod, RegCalibration, RegMethod, RegOptions};
use crate::error::{Error, Result};
use crate::metrics::{EvalRecord, MetricsReport};
use crate::platform::ingest::{ingest_annotations, ingest_scores, FileFormat};
use crate::router::{route, Pipeline, RoutingDecision, RoutingPolicy, RoutingSummary};
use crate::types::{CalibrationItem, ScoredInstance};

/// Paired annotation and score files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub annotations: PathBuf,
    pub scores: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<FileFormat>,
    #[serde(default = "default_min_annotators")]
    pub min_annotators: usize,
    #[serde(default)]
    pub method: DisagreementMethod,
}

fn default_min_annotators() -> usize {
    DEFAULT_MIN_ANNOTATORS
}

impl DatasetRef {
    pub fn new(annotations: impl Into<PathBuf>, scores: impl Into<PathBuf>) -> Self {
        DatasetRef {
            annotations: annotations.into(),
            scores: scores.into(),
            format: None,
            min_annotators: DEFAULT_MIN_ANNOTATORS,
            method: DisagreementMethod::Distance,
        }
    }

    pub fn load(&self) -> Result<Vec<LabeledItem>> {
        let (labeled, _) = ingest_annotations(&self.annotations, self.format, self.min_annotators, self.method)?;
        let scores = ingest_scores(&self.scores, self.format)?;
        join(labeled, scores)
    }
}

/// A scored comment with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub id: String,
    #[serde(flatten)]
    pub item: CalibrationItem,
}

/// Joins ground truth with scores by id, in annotation order. Scores without
/// a labeled counterpart (e.g. filtered for too few annotators) are dropped.
pub fn join(labeled: Vec<LabeledInstance>, scores: Vec<ScoredInstance>) -> Result<Vec<LabeledItem>> {
    let mut by_id: HashMap<String, ScoredInstance> = scores.into_iter().map(|s| (s.id.clone(), s)).collect();
    labeled
        .into_iter()
        .map(|l| {
            let s = by_id
                .remove(&l.id)
                .ok_or_else(|| Error::schema(None, format!("no scores for annotated id '{}'", l.id)))?;
            Ok(LabeledItem {
                id: l.id,
                item: CalibrationItem {
                    probs: s.probs,
                    reg: s.reg,
                    label: l.y,
                    d: l.d,
                },
            })
        })
        .collect()
}

/// The moderator-facing view of the active configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyView {
    pub gamma: f64,
    pub alpha: f64,
    pub pipeline: Pipeline,
    pub class_method: ClassMethod,
    pub reg_method: RegMethod,
}

/// Everything needed to route: policy plus both frozen calibrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    pub policy: RoutingPolicy,
    pub class: ClassCalibration,
    pub reg: RegCalibration,
    #[serde(default)]
    pub reg_options: RegOptions,
    /// Where the calibration data came from, kept so alpha changes can recalibrate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetRef>,
}

impl CalibrationState {
    pub fn calibrate(
        items: &[CalibrationItem],
        class_method: ClassMethod,
        reg_method: RegMethod,
        policy: RoutingPolicy,
        reg_options: RegOptions,
    ) -> Result<Self> {
        policy.validate()?;
        Ok(CalibrationState {
            policy,
            class: ClassCalibration::calibrate_items(class_method, items, policy.alpha)?,
            reg: RegCalibration::calibrate_items(reg_method, items, policy.alpha, &reg_options)?,
            reg_options,
            dataset: None,
        })
    }

    pub fn with_dataset(mut self, dataset: DatasetRef) -> Self {
        self.dataset = Some(dataset);
        self
    }

    pub fn view(&self) -> PolicyView {
        PolicyView {
            gamma: self.policy.gamma,
            alpha: self.policy.alpha,
            pipeline: self.policy.pipeline,
            class_method: self.class.method(),
            reg_method: self.reg.method(),
        }
    }

    /// A new state under `target`. Calibration is redone only when alpha or a
    /// method changes; a gamma or pipeline change reuses the calibrations.
    pub fn updated(&self, target: PolicyView, items: Option<&[CalibrationItem]>) -> Result<Self> {
        let policy = RoutingPolicy::new(target.gamma, target.alpha, target.pipeline)?;
        let current = self.view();
        if target.alpha == current.alpha
            && target.class_method == current.class_method
            && target.reg_method == current.reg_method
        {
            return Ok(CalibrationState {
                policy,
                ..self.clone()
            });
        }
        let items = items.ok_or_else(|| {
            Error::Conflict("changing alpha or a method needs the calibration data, which is not loaded".into())
        })?;
        let mut next = Self::calibrate(items, target.class_method, target.reg_method, policy, self.reg_options)?;
        next.dataset = self.dataset.clone();
        Ok(next)
    }

    pub fn route_one(&self, s: &ScoredInstance) -> Result<RoutingDecision> {
        let set = self.class.predict_set(&s.probs);
        let interval = if self.policy.pipeline == Pipeline::Stl {
            None
        } else {
            Some(self.reg.interval(&s.reg).map_err(|e| with_id(e, &s.id))?)
        };
        route(s.id.clone(), set, interval, &self.policy)
    }

    pub fn route(&self, instances: &[ScoredInstance]) -> Result<(Vec<RoutingDecision>, RoutingSummary)> {
        let decisions = instances.iter().map(|s| self.route_one(s)).collect::<Result<Vec<_>>>()?;
        let summary = RoutingSummary::from_decisions(&decisions);
        Ok((decisions, summary))
    }

    pub fn eval_records(&self, items: &[LabeledItem]) -> Result<Vec<EvalRecord>> {
        items
            .iter()
            .map(|l| {
                let it = &l.item;
                Ok(EvalRecord {
                    id: l.id.clone(),
                    y: it.label,
                    y_hat: it.probs.predicted(),
                    p_toxic: it.probs.p_toxic,
                    set: self.class.predict_set(&it.probs),
                    d: it.d,
                    d_hat: it.reg.d_hat,
                    interval: self.reg.interval(&it.reg).map_err(|e| with_id(e, &l.id))?,
                })
            })
            .collect()
    }

    pub fn evaluate(&self, items: &[LabeledItem], target_tpr: Option<f64>) -> Result<MetricsReport> {
        let target = target_tpr.unwrap_or_else(|| default_target_tpr(self.reg.method()));
        MetricsReport::compute(&self.eval_records(items)?, self.policy.gamma, self.policy.alpha, target)
    }
}

/// TPR used for threshold selection: 0.95 for bin-based intervals, 0.85 otherwise.
pub fn default_target_tpr(method: RegMethod) -> f64 {
    match method {
        RegMethod::R2ccp => 0.95,
        _ => 0.85,
    }
}

fn with_id(e: Error, id: &str) -> Error {
    match e {
        Error::Schema { row, reason } => Error::Schema {
            row,
            reason: format!("item '{id}': {reason}"),
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate, SimConfig};

    fn items(n: usize, seed: u64) -> Vec<LabeledItem> {
        generate(&SimConfig {
            n,
            seed,
            ..Default::default()
        })
        .unwrap()
        .iter()
        .map(|s| LabeledItem {
            id: s.record.id.clone(),
            item: s.calibration_item(DisagreementMethod::Distance).unwrap(),
        })
        .collect()
    }

    fn plain(v: &[LabeledItem]) -> Vec<CalibrationItem> {
        v.iter().map(|l| l.item.clone()).collect()
    }

    #[test]
    fn update_reuses_or_recalibrates() {
        let cal = plain(&items(300, 1));
        let s = CalibrationState::calibrate(&cal, ClassMethod::Lac, RegMethod::Ar, RoutingPolicy::default(), RegOptions::default())
            .unwrap();
        let mut v = s.view();
        v.gamma = 0.5;
        let g = s.updated(v, None).unwrap();
        assert_eq!((g.class.clone(), g.reg.clone()), (s.class.clone(), s.reg.clone()));
        v.alpha = 0.2;
        assert!(matches!(s.updated(v, None), Err(Error::Conflict(_))));
        let a = s.updated(v, Some(&cal)).unwrap();
        assert_eq!(a.class.alpha, 0.2);
        assert_eq!(a.reg.alpha, 0.2);
        v.class_method = ClassMethod::Crc;
        assert_eq!(s.updated(v, Some(&cal)).unwrap().class.method(), ClassMethod::Crc);
    }

    #[test]
    fn stl_routes_without_intervals() {
        let cal = plain(&items(200, 2));
        let policy = RoutingPolicy::new(0.0, 0.1, Pipeline::Stl).unwrap();
        let s = CalibrationState::calibrate(&cal, ClassMethod::Lac, RegMethod::Ar, policy, RegOptions::default()).unwrap();
        let test: Vec<ScoredInstance> = items(50, 3)
            .into_iter()
            .map(|l| ScoredInstance {
                id: l.id,
                probs: l.item.probs,
                reg: l.item.reg,
            })
            .collect();
        let (d, _) = s.route(&test).unwrap();
        assert!(d.iter().all(|x| x.interval.is_none()));
        assert!(d.iter().all(|x| x.is_review() == x.set_size.ne(&1)));
    }

    #[test]
    fn evaluate_reports_coverage() {
        let cal = plain(&items(1000, 4));
        let s = CalibrationState::calibrate(&cal, ClassMethod::Lac, RegMethod::Gamma, RoutingPolicy::default(), RegOptions::default())
            .unwrap();
        let report = s.evaluate(&items(1000, 5), None).unwrap();
        let cov = report.marginal_coverage.value.unwrap();
        assert!((0.85..0.95).contains(&cov), "{cov}");
        assert_eq!(report.target_tpr, 0.85);
    }

    #[test]
    fn join_requires_scores() {
        let l = vec![crate::annotations::build_labeled(
            &crate::annotations::AnnotationRecord::new("x", vec![1]),
            DisagreementMethod::Distance,
        )
        .unwrap()];
        assert!(matches!(join(l, vec![]), Err(Error::Schema { .. })));
    }
}
