use std::collections::BTreeSet;

use super::ratelimit::RateLimiter;
use super::url::{normalize_url, resolve_url, TrackingPattern};
use super::{CollectError, EngineConfig, FetchStatus, SerpResult};
use crate::clock::Clock;

/// A result as the adapter extracted it, before URL resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawResult {
    pub rank: usize,
    pub raw_url: String,
    pub title: String,
    pub snippet: String,
}

/// Source of organic result lists. Live scraping and fixture replay both sit
/// behind this boundary.
pub trait SerpAdapter: Send + Sync {
    fn fetch_serp(&self, query: &str, k: usize) -> Result<Vec<RawResult>, CollectError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchOutcome {
    pub status: FetchStatus,
    pub body: Vec<u8>,
    pub content_type: Option<String>,
}

impl FetchOutcome {
    pub fn failed(status: FetchStatus) -> Self {
        Self {
            status,
            body: Vec::new(),
            content_type: None,
        }
    }
}

pub trait DocumentFetcher: Send + Sync {
    fn fetch(&self, url: &str) -> FetchOutcome;
}

pub struct Engine {
    pub config: EngineConfig,
    adapter: Box<dyn SerpAdapter>,
    limiter: Option<RateLimiter>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("config", &self.config).finish()
    }
}

impl Engine {
    pub fn new(config: EngineConfig, adapter: Box<dyn SerpAdapter>) -> Self {
        let limiter = config.rate_limit.map(RateLimiter::per_minute);
        Self {
            config,
            adapter,
            limiter,
        }
    }

    pub fn id(&self) -> &str {
        &self.config.engine_id
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Capture {
    pub results: Vec<SerpResult>,
    pub note: Option<String>,
}

/// Fetch up to `k` organic results for `query`, in rank order.
///
/// Ranks reported by the adapter must form `1..m` without duplicates or
/// gaps; anything else is a parse failure.
pub fn collect_serp(
    engine: &Engine,
    query: &str,
    k: usize,
    patterns: &[TrackingPattern],
    clock: &dyn Clock,
) -> Result<Capture, CollectError> {
    if k == 0 {
        return Err(CollectError::Config("depth must be at least 1".into()));
    }
    if let Some(limiter) = &engine.limiter {
        limiter.acquire(clock);
    }
    let mut raw = engine.adapter.fetch_serp(query, k)?;

    let mut seen = BTreeSet::new();
    for r in &raw {
        if r.rank == 0 {
            return Err(CollectError::Parse("rank 0".into()));
        }
        if !seen.insert(r.rank) {
            return Err(CollectError::Parse(format!("duplicate rank {}", r.rank)));
        }
    }
    raw.sort_by_key(|r| r.rank);
    for (i, r) in raw.iter().enumerate() {
        if r.rank != i + 1 {
            return Err(CollectError::Parse(format!("missing rank {}", i + 1)));
        }
    }
    raw.truncate(k);

    let captured_at = clock.now();
    let results: Vec<SerpResult> = raw
        .into_iter()
        .map(|r| {
            let resolution = resolve_url(&r.raw_url, patterns);
            let normalized_url = resolution.url().and_then(|u| normalize_url(u).ok());
            let resolution = match (&resolution, &normalized_url) {
                (super::Resolution::Unresolvable { .. }, _) | (_, Some(_)) => resolution,
                (_, None) => super::Resolution::Unresolvable {
                    reason: "target url cannot be normalized".into(),
                },
            };
            SerpResult {
                engine_id: engine.id().to_string(),
                query: query.to_string(),
                rank: r.rank,
                raw_url: r.raw_url,
                resolution,
                normalized_url,
                title: r.title,
                snippet: r.snippet,
                captured_at,
            }
        })
        .collect();
    let note = (results.len() < k).then(|| format!("short capture: {} of {k}", results.len()));
    Ok(Capture { results, note })
}
