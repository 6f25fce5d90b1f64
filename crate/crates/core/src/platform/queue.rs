//! Review queue and its append-only decision log.
//!
//! Every state change is a [`LogEntry`]; the live queue is built by applying
//! entries in order, so replaying the log file reproduces it exactly.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::platform::engine::PolicyView;
use crate::router::RoutingDecision;
use crate::types::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueStatus {
    Pending,
    Resolved,
}

impl std::str::FromStr for QueueStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pending" => Ok(QueueStatus::Pending),
            "resolved" => Ok(QueueStatus::Resolved),
            other => Err(Error::schema(None, format!("unknown queue status '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewQueueItem {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub decision: RoutingDecision,
    pub enqueued_at: DateTime<Utc>,
    pub status: QueueStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moderator_label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEntry {
    Routed {
        at: DateTime<Utc>,
        decision: RoutingDecision,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
    },
    Resolved {
        at: DateTime<Utc>,
        id: String,
        label: Label,
    },
    PolicyChanged {
        at: DateTime<Utc>,
        policy: PolicyView,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReviewQueue {
    items: Vec<ReviewQueueItem>,
    index: HashMap<String, usize>,
}

impl ReviewQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ReviewQueueItem> {
        self.index.get(id).map(|i| &self.items[*i])
    }

    /// Items in enqueue order, optionally filtered by status.
    pub fn list(&self, status: Option<QueueStatus>) -> impl Iterator<Item = &ReviewQueueItem> {
        self.items.iter().filter(move |i| status.is_none_or(|s| i.status == s))
    }

    pub fn pending_count(&self) -> usize {
        self.list(Some(QueueStatus::Pending)).count()
    }

    /// Checks that `id` can be resolved.
    pub fn check_resolvable(&self, id: &str) -> Result<()> {
        match self.get(id) {
            None => Err(Error::NotFound(id.to_string())),
            Some(item) if item.status == QueueStatus::Resolved => {
                Err(Error::Conflict(format!("item '{id}' is already resolved")))
            }
            Some(_) => Ok(()),
        }
    }

    /// Applies one log entry. Automatic decisions leave the queue unchanged.
    /// A review decision for a pending id replaces the earlier one; a
    /// resolved id keeps its resolution.
    pub fn apply(&mut self, entry: &LogEntry) -> Result<()> {
        match entry {
            LogEntry::Routed { at, decision, text } => {
                if !decision.is_review() {
                    return Ok(());
                }
                match self.index.get(&decision.id) {
                    Some(&i) if self.items[i].status == QueueStatus::Pending => {
                        let item = &mut self.items[i];
                        item.decision = decision.clone();
                        item.text = text.clone();
                        item.enqueued_at = *at;
                    }
                    Some(_) => {}
                    None => {
                        self.index.insert(decision.id.clone(), self.items.len());
                        self.items.push(ReviewQueueItem {
                            id: decision.id.clone(),
                            text: text.clone(),
                            decision: decision.clone(),
                            enqueued_at: *at,
                            status: QueueStatus::Pending,
                            moderator_label: None,
                            resolved_at: None,
                        });
                    }
                }
                Ok(())
            }
            LogEntry::Resolved { at, id, label } => {
                self.check_resolvable(id)?;
                let item = &mut self.items[self.index[id]];
                item.status = QueueStatus::Resolved;
                item.moderator_label = Some(*label);
                item.resolved_at = Some(*at);
                Ok(())
            }
            LogEntry::PolicyChanged { .. } => Ok(()),
        }
    }
}

/// Line-delimited JSON log opened for appending.
#[derive(Debug)]
pub struct DecisionLog {
    path: PathBuf,
    file: File,
}

impl DecisionLog {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(DecisionLog {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends entries and syncs them to disk.
    pub fn append(&mut self, entries: &[LogEntry]) -> Result<()> {
        let mut buf = String::new();
        for e in entries {
            buf.push_str(&serde_json::to_string(e).map_err(|e| Error::Io(e.to_string()))?);
            buf.push('\n');
        }
        self.file.write_all(buf.as_bytes())?;
        self.file.sync_data()?;
        Ok(())
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| Error::Integrity(format!("decision log line {}: {e}", i + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

/// Rebuilds the queue from a log file; a missing file gives an empty queue.
pub fn replay(path: &Path) -> Result<ReviewQueue> {
    let mut q = ReviewQueue::new();
    for e in read_log(path)? {
        q.apply(&e)?;
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::router::{route, Pipeline, RoutingPolicy};
    use crate::types::{Interval, PredictionSet};

    fn routed(id: &str, set: PredictionSet) -> LogEntry {
        let policy = RoutingPolicy::new(0.8, 0.1, Pipeline::Com).unwrap();
        LogEntry::Routed {
            at: Utc::now(),
            decision: route(id, set, Some(Interval { lo: 0.1, hi: 0.2 }), &policy).unwrap(),
            text: Some(format!("text {id}")),
        }
    }

    #[test]
    fn resolve_transitions() {
        let mut q = ReviewQueue::new();
        q.apply(&routed("a", PredictionSet::FULL)).unwrap();
        q.apply(&routed("b", PredictionSet::singleton(Label::Toxic))).unwrap();
        assert_eq!((q.len(), q.pending_count()), (1, 1));
        let resolve = |id: &str| LogEntry::Resolved {
            at: Utc::now(),
            id: id.into(),
            label: Label::NonToxic,
        };
        q.apply(&resolve("a")).unwrap();
        let item = q.get("a").unwrap();
        assert_eq!(item.status, QueueStatus::Resolved);
        assert!(item.moderator_label.is_some() && item.resolved_at.is_some());
        assert!(matches!(q.apply(&resolve("a")), Err(Error::Conflict(_))));
        assert!(matches!(q.apply(&resolve("zzz")), Err(Error::NotFound(_))));
        // Re-routing a resolved item keeps the resolution.
        q.apply(&routed("a", PredictionSet::EMPTY)).unwrap();
        assert_eq!(q.get("a").unwrap().status, QueueStatus::Resolved);
    }

    #[test]
    fn replay_matches_live_queue() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log").join("decisions.jsonl");
        let mut log = DecisionLog::open(&path).unwrap();
        let mut live = ReviewQueue::new();
        let entries = vec![
            routed("a", PredictionSet::FULL),
            routed("b", PredictionSet::EMPTY),
            routed("c", PredictionSet::singleton(Label::NonToxic)),
            LogEntry::Resolved {
                at: Utc::now(),
                id: "b".into(),
                label: Label::Toxic,
            },
            routed("a", PredictionSet::EMPTY),
        ];
        for e in &entries {
            live.apply(e).unwrap();
            log.append(std::slice::from_ref(e)).unwrap();
        }
        assert_eq!(replay(&path).unwrap(), live);
        assert_eq!(read_log(&path).unwrap(), entries);
        assert!(replay(&dir.path().join("missing.jsonl")).unwrap().is_empty());

        fs::write(&path, "{not json}\n").unwrap();
        assert!(matches!(replay(&path), Err(Error::Integrity(_))));
    }
}
