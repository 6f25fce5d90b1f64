//! Auto-action or human review for each comment.
//!
//! A comment goes to review when its prediction set is not a singleton
//! (`uncertain`) or when the upper end of its disagreement interval reaches
//! the moderator's threshold `gamma` (`ambiguous`). Both reasons are recorded
//! when both apply. Otherwise the singleton label decides: toxic comments are
//! removed, the rest published.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Interval, Label, PredictionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Pipeline {
    /// Classifier only; intervals are optional.
    #[serde(rename = "STL")]
    Stl,
    /// Separate classifier and regressor.
    #[serde(rename = "CoM")]
    #[default]
    Com,
    /// One multitask model with both heads.
    #[serde(rename = "MTL")]
    Mtl,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Stl => "STL",
            Pipeline::Com => "CoM",
            Pipeline::Mtl => "MTL",
        }
    }

    pub fn requires_interval(self) -> bool {
        !matches!(self, Pipeline::Stl)
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stl" => Ok(Pipeline::Stl),
            "com" => Ok(Pipeline::Com),
            "mtl" => Ok(Pipeline::Mtl),
            other => Err(Error::Config(format!("unknown pipeline '{other}'"))),
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingPolicy {
    pub gamma: f64,
    pub alpha: f64,
    #[serde(default)]
    pub pipeline: Pipeline,
}

impl RoutingPolicy {
    pub fn new(gamma: f64, alpha: f64, pipeline: Pipeline) -> Result<Self> {
        let p = RoutingPolicy { gamma, alpha, pipeline };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Policy(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Policy(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

impl Default for RoutingPolicy {
    fn default() -> Self {
        RoutingPolicy {
            gamma: 0.8,
            alpha: 0.1,
            pipeline: Pipeline::Com,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    AutoPublish,
    AutoRemove,
    Review,
}

impl Action {
    pub fn name(self) -> &'static str {
        match self {
            Action::AutoPublish => "auto_publish",
            Action::AutoRemove => "auto_remove",
            Action::Review => "review",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Uncertain,
    Ambiguous,
}

impl Reason {
    pub fn name(self) -> &'static str {
        match self {
            Reason::Uncertain => "uncertain",
            Reason::Ambiguous => "ambiguous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub id: String,
    pub action: Action,
    /// Present exactly when the action is automatic.
    pub label: Option<Label>,
    pub reasons: Vec<Reason>,
    pub set_size: usize,
    pub interval: Option<Interval>,
}

impl RoutingDecision {
    pub fn is_review(&self) -> bool {
        self.action == Action::Review
    }

    pub fn has_reason(&self, reason: Reason) -> bool {
        self.reasons.contains(&reason)
    }
}

pub fn route(
    id: impl Into<String>,
    set: PredictionSet,
    interval: Option<Interval>,
    policy: &RoutingPolicy,
) -> Result<RoutingDecision> {
    let id = id.into();
    if interval.is_none() && policy.pipeline.requires_interval() {
        return Err(Error::Policy(format!(
            "item '{id}': {} pipeline requires a disagreement interval",
            policy.pipeline
        )));
    }
    let mut reasons = Vec::new();
    if set.is_uncertain() {
        reasons.push(Reason::Uncertain);
    }
    if interval.is_some_and(|iv| iv.hi >= policy.gamma) {
        reasons.push(Reason::Ambiguous);
    }
    let (action, label) = match (reasons.is_empty(), set.single()) {
        (true, Some(Label::Toxic)) => (Action::AutoRemove, Some(Label::Toxic)),
        (true, Some(Label::NonToxic)) => (Action::AutoPublish, Some(Label::NonToxic)),
        _ => (Action::Review, None),
    };
    Ok(RoutingDecision {
        id,
        action,
        label,
        reasons,
        set_size: set.len(),
        interval,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingSummary {
    pub total: usize,
    pub review: usize,
    pub auto: usize,
    pub by_action: BTreeMap<String, usize>,
    pub by_reason: BTreeMap<String, usize>,
}

impl RoutingSummary {
    pub fn from_decisions(decisions: &[RoutingDecision]) -> Self {
        let mut s = RoutingSummary {
            total: decisions.len(),
            ..Default::default()
        };
        for d in decisions {
            if d.is_review() {
                s.review += 1;
            } else {
                s.auto += 1;
            }
            *s.by_action.entry(d.action.name().to_string()).or_default() += 1;
            for r in &d.reasons {
                *s.by_reason.entry(r.name().to_string()).or_default() += 1;
            }
        }
        s
    }
}

/// Item to route: `(id, set, interval)`.
pub type RouteItem = (String, PredictionSet, Option<Interval>);

pub fn route_batch(items: &[RouteItem], policy: &RoutingPolicy) -> Result<(Vec<RoutingDecision>, RoutingSummary)> {
    let decisions = items
        .iter()
        .map(|(id, set, iv)| route(id.clone(), *set, *iv, policy))
        .collect::<Result<Vec<_>>>()?;
    let summary = RoutingSummary::from_decisions(&decisions);
    Ok((decisions, summary))
}
