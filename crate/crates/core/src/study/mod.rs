//! Judgment collection: pooled, engine-anonymous tasks served to jurors
//! under leases, graded and binary judgments, completion vouchers, and the
//! single-assessor navigational verdicts.

mod navigational;
mod pool;
mod service;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::sampler::Intent;
use crate::store::{ContentHash, StoreError};

pub use navigational::{build_nav_items, NavItem, NavItemView};
pub use pool::{build_tasks, pool_results, presentation_order};
pub use service::{
    hash_access_code, Ack, Completion, JudgmentInput, JudgmentView, PendingVoucher, ResultView,
    RunProgress, StudyOutcome, StudyService, StudySettings, TaskPayload, TaskProgress, TaskRow,
};

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("invalid code")]
    InvalidCode,
    #[error("unknown session")]
    UnknownSession,
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("pooled result {0} is not part of the session's current task")]
    ForeignResult(String),
    #[error("session holds no task")]
    NoTask,
    #[error("task lease was lost to another session")]
    LeaseLost,
    #[error("task {0} is already complete")]
    TaskComplete(String),
    #[error("invalid judgment: {0}")]
    InvalidJudgment(String),
    #[error("verdict for {query:?} on {engine} already recorded")]
    DuplicateVerdict { query: String, engine: String },
    #[error("unknown navigational item {0}")]
    UnknownItem(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub engine_id: String,
    pub rank: usize,
    /// Further ranks at which the same engine listed the same URL.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub duplicate_ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PooledResult {
    pub pooled_id: String,
    /// Dedup key: the normalized URL, or `raw:<url>` when the engine's URL
    /// could not be resolved.
    pub key: String,
    pub normalized_url: Option<String>,
    pub snapshot_id: Option<ContentHash>,
    /// A stored snapshot exists, so a juror can see the document.
    pub judgeable: bool,
    pub provenance: Vec<Provenance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Open,
    InProgress,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentTask {
    pub task_id: String,
    pub query: String,
    pub intent: Intent,
    pub results: Vec<PooledResult>,
    /// Pooled ids in the order jurors see them.
    pub presentation_order: Vec<String>,
}

impl JudgmentTask {
    pub fn result(&self, pooled_id: &str) -> Option<&PooledResult> {
        self.results.iter().find(|r| r.pooled_id == pooled_id)
    }

    pub fn judgeable_count(&self) -> usize {
        self.results.iter().filter(|r| r.judgeable).count()
    }

    /// Tasks with nothing to judge are complete from the start.
    pub fn auto_complete(&self) -> bool {
        self.judgeable_count() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JurorSession {
    pub session_id: String,
    pub access_code_hash: String,
    pub started_at: DateTime<Utc>,
    pub contact: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Binary {
    Relevant,
    NotRelevant,
}

/// One stored judgment. A re-submission for the same (session, result)
/// appends a new record pointing back at the one it supersedes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub session_id: String,
    pub task_id: String,
    pub pooled_id: String,
    pub binary: Option<Binary>,
    pub graded: Option<u8>,
    pub skipped: bool,
    pub recorded_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<u64>,
}

impl Judgment {
    pub fn check(binary: Option<Binary>, graded: Option<u8>, skipped: bool) -> Result<(), StudyError> {
        if let Some(g) = graded {
            if g > 4 {
                return Err(StudyError::InvalidJudgment(format!("grade {g} outside 0..4")));
            }
        }
        if skipped && (binary.is_some() || graded.is_some()) {
            return Err(StudyError::InvalidJudgment(
                "a skipped result carries no judgment".into(),
            ));
        }
        if !skipped && binary.is_none() && graded.is_none() {
            return Err(StudyError::InvalidJudgment(
                "give a binary or graded judgment, or skip".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NavigationalVerdict {
    pub query: String,
    pub engine_id: String,
    pub correct: bool,
    pub assessor: String,
    /// Why the system recorded a verdict without an assessor (no result,
    /// failed capture, unresolvable URL).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub recorded_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoucherEvent {
    pub session_id: String,
    pub task_id: String,
    pub issued_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub task_id: String,
    pub session_id: String,
    pub expires_at: DateTime<Utc>,
}
