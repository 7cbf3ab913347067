//! Recorded SERPs and documents. Live results pages cannot be revisited, so
//! every test and acceptance run goes through these fixtures.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adapter::{DocumentFetcher, FetchOutcome, RawResult, SerpAdapter};
use super::url::normalize_url;
use super::{CollectError, FetchStatus};
use crate::sampler::normalize_query;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub query: String,
    pub rank: usize,
    pub raw_url: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FixtureDocument {
    Stored {
        body: String,
        #[serde(default = "html")]
        content_type: String,
    },
    Failed(FetchStatus),
}

fn html() -> String {
    "text/html; charset=utf-8".into()
}

/// One engine's recorded results plus the documents behind them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayFixture {
    #[serde(default)]
    pub results: Vec<ReplayRecord>,
    /// Queries for which the engine itself failed, with the failure reason.
    #[serde(default)]
    pub failures: HashMap<String, String>,
    #[serde(default)]
    pub documents: HashMap<String, FixtureDocument>,
}

impl ReplayFixture {
    pub fn load(path: &Path) -> Result<Self, CollectError> {
        let bytes = std::fs::read(path).map_err(|e| CollectError::Fixture {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        serde_json::from_slice(&bytes).map_err(|e| CollectError::Fixture {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

#[derive(Debug)]
pub struct ReplayAdapter {
    path: PathBuf,
    by_query: HashMap<String, Vec<RawResult>>,
    failures: HashMap<String, String>,
}

impl ReplayAdapter {
    pub fn new(path: impl Into<PathBuf>, fixture: &ReplayFixture) -> Self {
        let mut by_query: HashMap<String, Vec<RawResult>> = HashMap::new();
        for r in &fixture.results {
            let q = normalize_query(&r.query).unwrap_or_default();
            by_query.entry(q).or_default().push(RawResult {
                rank: r.rank,
                raw_url: r.raw_url.clone(),
                title: r.title.clone(),
                snippet: r.snippet.clone(),
            });
        }
        let failures = fixture
            .failures
            .iter()
            .map(|(q, reason)| (normalize_query(q).unwrap_or_default(), reason.clone()))
            .collect();
        Self {
            path: path.into(),
            by_query,
            failures,
        }
    }
}

impl SerpAdapter for ReplayAdapter {
    fn fetch_serp(&self, query: &str, _k: usize) -> Result<Vec<RawResult>, CollectError> {
        let q = normalize_query(query).unwrap_or_default();
        if let Some(reason) = self.failures.get(&q) {
            return Err(CollectError::Adapter(format!(
                "{}: {reason}",
                self.path.display()
            )));
        }
        // Entries keep fixture order; rank validation happens upstream.
        Ok(self.by_query.get(&q).cloned().unwrap_or_default())
    }
}

/// Serves documents recorded in one or more fixtures. Unknown URLs answer
/// HTTP 404.
#[derive(Debug, Default)]
pub struct ReplayFetcher {
    documents: HashMap<String, FixtureDocument>,
}

impl ReplayFetcher {
    pub fn new<'a>(fixtures: impl IntoIterator<Item = &'a ReplayFixture>) -> Self {
        let mut documents = HashMap::new();
        for f in fixtures {
            for (url, doc) in &f.documents {
                let key = normalize_url(url).unwrap_or_else(|_| url.clone());
                documents.insert(key, doc.clone());
            }
        }
        Self { documents }
    }
}

impl DocumentFetcher for ReplayFetcher {
    fn fetch(&self, url: &str) -> FetchOutcome {
        let key = normalize_url(url).unwrap_or_else(|_| url.to_string());
        match self.documents.get(&key) {
            Some(FixtureDocument::Stored { body, content_type }) if !body.is_empty() => FetchOutcome {
                status: FetchStatus::Ok,
                body: body.as_bytes().to_vec(),
                content_type: Some(content_type.clone()),
            },
            Some(FixtureDocument::Stored { .. }) => {
                FetchOutcome::failed(FetchStatus::HttpError { code: 204 })
            }
            Some(FixtureDocument::Failed(status)) => FetchOutcome::failed(status.clone()),
            None => FetchOutcome::failed(FetchStatus::HttpError { code: 404 }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"{
        "results": [
            {"query": "Wetter Hamburg", "rank": 2, "raw_url": "https://b.de/"},
            {"query": "wetter hamburg", "rank": 1, "raw_url": "https://a.de/", "title": "A"}
        ],
        "failures": {"broken": "captcha"},
        "documents": {
            "https://A.de": {"body": "<p>a</p>"},
            "https://b.de/": {"status": "timeout"},
            "https://c.de/": {"status": "http-error", "code": 500}
        }
    }"#;

    #[test]
    fn replay_serves_recorded_results() {
        let f: ReplayFixture = serde_json::from_str(FIXTURE).unwrap();
        let a = ReplayAdapter::new("f.json", &f);
        let r = a.fetch_serp("WETTER  hamburg", 10).unwrap();
        assert_eq!(r.len(), 2);
        assert!(a.fetch_serp("nothing", 10).unwrap().is_empty());
        assert!(a.fetch_serp("broken", 10).is_err());
    }

    #[test]
    fn replay_documents() {
        let f: ReplayFixture = serde_json::from_str(FIXTURE).unwrap();
        let fetcher = ReplayFetcher::new([&f]);
        let ok = fetcher.fetch("https://a.de/");
        assert_eq!(ok.status, FetchStatus::Ok);
        assert_eq!(ok.body, b"<p>a</p>");
        let t = fetcher.fetch("https://b.de");
        assert_eq!(t.status, FetchStatus::Timeout);
        assert!(t.body.is_empty());
        assert_eq!(
            fetcher.fetch("https://c.de/").status,
            FetchStatus::HttpError { code: 500 }
        );
        assert_eq!(
            fetcher.fetch("https://d.de/").status,
            FetchStatus::HttpError { code: 404 }
        );
    }
}
