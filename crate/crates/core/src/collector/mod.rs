//! Result collection: submit sampled queries to engine adapters, capture the
//! organic results to the per-intent depth, resolve tracking URLs and
//! snapshot every result document once per run.

mod adapter;
mod live;
mod ratelimit;
mod replay;
mod run;
pub mod url;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::sampler::Intent;
use crate::store::{ContentHash, StoreError, Validate};

pub use adapter::{collect_serp, Capture, DocumentFetcher, Engine, FetchOutcome, RawResult, SerpAdapter};
pub use live::{extract_results, HttpFetcher, LiveScrapeAdapter};
pub use ratelimit::RateLimiter;
pub use replay::{FixtureDocument, ReplayAdapter, ReplayFetcher, ReplayFixture, ReplayRecord};
pub use run::{
    load_run, materialize_run, run_collection, CollectionOptions, Interrupt, RunContext,
};
pub use self::url::{normalize_url, resolve_url, Resolution, TrackingPattern, UrlError};

#[derive(Debug, thiserror::Error)]
pub enum CollectError {
    #[error("adapter failure: {0}")]
    Adapter(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("fixture {path}: {reason}")]
    Fixture { path: PathBuf, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Regular expressions describing a live results page. Ranks count the
/// organic blocks that survive the exclude rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRules {
    /// Matches one organic result block.
    pub result: String,
    /// Capture group 1 is the result link.
    pub link: String,
    /// Capture group 1 is the title markup.
    pub title: String,
    #[serde(default)]
    pub snippet: Option<String>,
    /// Blocks matching any of these are ads or widgets and are skipped.
    #[serde(default)]
    pub exclude: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "adapter", rename_all = "kebab-case")]
pub enum AdapterConfig {
    LiveScrape {
        /// URL template; `{query}` is replaced by the form-encoded query and
        /// `{k}` by the requested depth.
        endpoint: String,
        rules: ExtractionRules,
    },
    ReplayFixture {
        fixture: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub engine_id: String,
    pub display_name: String,
    #[serde(flatten)]
    pub adapter: AdapterConfig,
    /// Maximum requests per minute; required for live adapters.
    #[serde(default)]
    pub rate_limit: Option<u32>,
}

impl EngineConfig {
    pub fn check(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let id_ok = !self.engine_id.is_empty()
            && self
                .engine_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !id_ok {
            problems.push(format!("engine id {:?} must be a short token", self.engine_id));
        }
        if let AdapterConfig::LiveScrape { endpoint, .. } = &self.adapter {
            match self.rate_limit {
                Some(n) if n >= 1 => {}
                _ => problems.push(format!(
                    "engine {}: live adapters need rate_limit >= 1",
                    self.engine_id
                )),
            }
            if !endpoint.contains("{query}") {
                problems.push(format!("engine {}: endpoint lacks {{query}}", self.engine_id));
            }
        }
        if self.rate_limit == Some(0) {
            problems.push(format!("engine {}: rate_limit must be >= 1", self.engine_id));
        }
        problems
    }
}

/// How many results to capture per intent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthPolicy(pub BTreeMap<Intent, usize>);

impl Default for DepthPolicy {
    fn default() -> Self {
        DepthPolicy(BTreeMap::from([
            (Intent::Informational, 10),
            (Intent::Navigational, 1),
        ]))
    }
}

impl DepthPolicy {
    pub fn depth(&self, intent: Intent) -> Option<usize> {
        self.0.get(&intent).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchPolicy {
    pub timeout: Duration,
    pub retries: u32,
    pub user_agent: String,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(10),
            retries: 1,
            user_agent: concat!("serpeval/", env!("CARGO_PKG_VERSION")).into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerpResult {
    pub engine_id: String,
    pub query: String,
    pub rank: usize,
    pub raw_url: String,
    pub resolution: Resolution,
    /// Absent when the raw URL could not be resolved.
    pub normalized_url: Option<String>,
    pub title: String,
    pub snippet: String,
    pub captured_at: DateTime<Utc>,
}

impl SerpResult {
    pub fn resolved_url(&self) -> Option<&str> {
        self.resolution.url()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum FetchStatus {
    Ok,
    HttpError { code: u16 },
    Timeout,
    /// Connection-level failure (DNS, refused, reset).
    NetworkError { reason: String },
    Unresolvable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentSnapshot {
    pub normalized_url: String,
    #[serde(flatten)]
    pub fetch_status: FetchStatus,
    /// Content hash of the stored bytes; present iff the fetch succeeded.
    pub snapshot_id: Option<ContentHash>,
    pub content_type: Option<String>,
    pub fetched_at: DateTime<Utc>,
}

impl DocumentSnapshot {
    pub fn is_ok(&self) -> bool {
        self.fetch_status == FetchStatus::Ok
    }
}

impl Validate for DocumentSnapshot {
    fn validate(&self) -> Result<(), String> {
        if self.is_ok() != self.snapshot_id.is_some() {
            return Err(format!(
                "snapshot of {}: content must be present iff status is ok",
                self.normalized_url
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum CaptureOutcome {
    Succeeded {
        results: Vec<SerpResult>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
    },
    Failed {
        reason: String,
    },
}

/// One line of the run ledger: a single (query, engine) attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub query: String,
    pub intent: Intent,
    pub engine_id: String,
    pub depth: usize,
    pub attempted_at: DateTime<Utc>,
    #[serde(flatten)]
    pub outcome: CaptureOutcome,
}

impl CaptureRecord {
    pub fn results(&self) -> &[SerpResult] {
        match &self.outcome {
            CaptureOutcome::Succeeded { results, .. } => results,
            CaptureOutcome::Failed { .. } => &[],
        }
    }

    pub fn succeeded(&self) -> bool {
        matches!(self.outcome, CaptureOutcome::Succeeded { .. })
    }
}

impl Validate for CaptureRecord {
    fn validate(&self) -> Result<(), String> {
        let results = self.results();
        if results.len() > self.depth {
            return Err(format!("{} results exceed depth {}", results.len(), self.depth));
        }
        for (i, r) in results.iter().enumerate() {
            if r.rank != i + 1 {
                return Err(format!("rank {} at position {}", r.rank, i + 1));
            }
            if r.engine_id != self.engine_id || r.query != self.query {
                return Err("result does not belong to this capture".into());
            }
            let expected = r.resolved_url().and_then(|u| normalize_url(u).ok());
            if r.normalized_url != expected {
                return Err(format!("normalized url of rank {} is not derived from its resolved url", r.rank));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineSummary {
    pub engine_id: String,
    pub display_name: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLedger {
    pub attempted: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub short_captures: usize,
    pub unresolvable_urls: usize,
    pub snapshots_by_status: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Complete,
    Degraded,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionRun {
    pub run_id: String,
    pub sample: String,
    pub engines: Vec<EngineSummary>,
    pub depth_policy: DepthPolicy,
    /// Ordered by sample position, then engine order.
    pub captures: Vec<CaptureRecord>,
    /// Ordered by normalized URL.
    pub snapshots: Vec<DocumentSnapshot>,
    pub ledger: RunLedger,
    pub status: RunStatus,
}

impl CollectionRun {
    pub fn capture(&self, query: &str, engine_id: &str) -> Option<&CaptureRecord> {
        self.captures
            .iter()
            .find(|c| c.query == query && c.engine_id == engine_id)
    }

    pub fn snapshot(&self, normalized_url: &str) -> Option<&DocumentSnapshot> {
        self.snapshots
            .binary_search_by(|s| s.normalized_url.as_str().cmp(normalized_url))
            .ok()
            .map(|i| &self.snapshots[i])
    }

    pub fn queries(&self, intent: Intent) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.captures
            .iter()
            .filter(|c| c.intent == intent && seen.insert(c.query.as_str()))
            .map(|c| c.query.as_str())
            .collect()
    }
}

impl Validate for CollectionRun {
    fn validate(&self) -> Result<(), String> {
        for c in &self.captures {
            c.validate()?;
        }
        for s in &self.snapshots {
            s.validate()?;
        }
        if self.snapshots.windows(2).any(|w| w[0].normalized_url >= w[1].normalized_url) {
            return Err("snapshots must be unique and sorted by url".into());
        }
        let l = &self.ledger;
        if l.succeeded + l.failed != l.attempted || l.attempted != self.captures.len() {
            return Err("ledger does not reconcile".into());
        }
        Ok(())
    }
}

/// Instantiate adapters for `configs`. Fixture paths resolve against
/// `base_dir`. Documents come from the fixtures when every engine replays,
/// otherwise from the network.
pub fn build_engines(
    configs: &[EngineConfig],
    base_dir: &std::path::Path,
    policy: &FetchPolicy,
) -> Result<(Vec<Engine>, Box<dyn DocumentFetcher>), CollectError> {
    let mut engines = Vec::with_capacity(configs.len());
    let mut fixtures = Vec::new();
    let mut any_live = false;
    for cfg in configs {
        let problems = cfg.check();
        if !problems.is_empty() {
            return Err(CollectError::Config(problems.join("; ")));
        }
        let mut cfg = cfg.clone();
        let adapter: Box<dyn SerpAdapter> = match &cfg.adapter {
            AdapterConfig::ReplayFixture { fixture } => {
                let path = base_dir.join(fixture);
                let f = ReplayFixture::load(&path)?;
                let a = ReplayAdapter::new(path, &f);
                fixtures.push(f);
                // A replay contacts no server, so there is nothing to throttle.
                cfg.rate_limit = None;
                Box::new(a)
            }
            AdapterConfig::LiveScrape { endpoint, rules } => {
                any_live = true;
                Box::new(LiveScrapeAdapter::new(endpoint, rules.clone(), policy)?)
            }
        };
        engines.push(Engine::new(cfg, adapter));
    }
    let fetcher: Box<dyn DocumentFetcher> = if any_live {
        Box::new(HttpFetcher::new(policy)?)
    } else {
        Box::new(ReplayFetcher::new(fixtures.iter()))
    };
    Ok((engines, fetcher))
}
