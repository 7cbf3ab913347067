//! The study configuration file. One TOML document holds every parameter
//! of a study; relative paths resolve against the file's directory.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::collector::{AdapterConfig, DepthPolicy, EngineConfig, FetchPolicy, TrackingPattern};
use crate::sampler::{Intent, LabelMode, LogFormat};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub version: u32,
    pub study_id: String,
    /// Root of every seeded choice in the study.
    pub seed: u64,
    pub paths: Paths,
    pub sampling: Sampling,
    pub collection: Collection,
    #[serde(default)]
    pub engines: Vec<EngineConfig>,
    pub study: StudyParams,
    /// Directory the relative paths resolve against; set on load.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub store: PathBuf,
    pub log: PathBuf,
    #[serde(default = "instances")]
    pub log_format: LogFormat,
    pub labels: PathBuf,
    /// Base directory for replay fixtures.
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
}

fn instances() -> LogFormat {
    LogFormat::Instances
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    pub segments: usize,
    pub candidates_per_segment: usize,
    /// Queries kept per segment, per studied intent.
    pub targets: BTreeMap<Intent, usize>,
    #[serde(default = "strict")]
    pub label_mode: LabelMode,
}

fn strict() -> LabelMode {
    LabelMode::Strict
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Collection {
    pub run_id: String,
    pub depth: DepthPolicy,
    #[serde(default = "four")]
    pub concurrency: usize,
    #[serde(default = "point_two")]
    pub failure_threshold: f64,
    #[serde(default)]
    pub tracking: Vec<TrackingPattern>,
    #[serde(default = "ten")]
    pub timeout_secs: u64,
    #[serde(default = "one")]
    pub retries: u32,
    /// Timestamp recorded on every capture and snapshot instead of the wall
    /// clock. Meant for replay runs, whose outputs must be reproducible.
    #[serde(default)]
    pub fixed_time: Option<DateTime<Utc>>,
}

fn four() -> usize {
    4
}
fn point_two() -> f64 {
    0.2
}
fn ten() -> u64 {
    10
}
fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyParams {
    pub access_codes: Vec<String>,
    #[serde(default = "sixty")]
    pub lease_minutes: u64,
    /// Written as a decimal; read exactly, so 0.9 means 9/10.
    #[serde(default = "point_nine")]
    pub voucher_threshold: f64,
    /// Bearer token for the admin endpoints.
    pub admin_token: String,
    #[serde(default = "listen")]
    pub listen: String,
}

fn sixty() -> u64 {
    60
}
fn point_nine() -> f64 {
    0.9
}
fn listen() -> String {
    "127.0.0.1:8080".into()
}

/// Exact value of a decimal as written: 0.9 is 9/10, not the nearest f64.
pub fn decimal_ratio(x: f64) -> Option<Ratio<u64>> {
    if !x.is_finite() || x < 0.0 {
        return None;
    }
    let text = format!("{x}");
    let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
    let den = 10u64.checked_pow(frac.len() as u32)?;
    let num = int
        .parse::<u64>()
        .ok()?
        .checked_mul(den)?
        .checked_add(if frac.is_empty() { 0 } else { frac.parse().ok()? })?;
    Some(Ratio::new(num, den))
}

fn is_token(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl StudyConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut cfg: StudyConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        cfg.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn store_dir(&self) -> PathBuf {
        self.resolve(&self.paths.store)
    }

    pub fn fixtures_dir(&self) -> PathBuf {
        match &self.paths.fixtures {
            Some(f) => self.resolve(f),
            None => self.base_dir.clone(),
        }
    }

    pub fn fetch_policy(&self) -> FetchPolicy {
        FetchPolicy {
            timeout: Duration::from_secs(self.collection.timeout_secs),
            retries: self.collection.retries,
            ..FetchPolicy::default()
        }
    }

    pub fn voucher_threshold(&self) -> Ratio<u64> {
        decimal_ratio(self.study.voucher_threshold).unwrap_or(Ratio::new(9, 10))
    }

    /// Every problem found, not just the first. Missing input files are
    /// reported only when `check_files` is set.
    pub fn problems(&self, check_files: bool) -> Vec<String> {
        let mut p = Vec::new();
        if self.version != CONFIG_VERSION {
            p.push(format!("version {} is not supported (expected {CONFIG_VERSION})", self.version));
        }
        if !is_token(&self.study_id) {
            p.push(format!("study_id {:?} must be a short token", self.study_id));
        }
        let s = &self.sampling;
        if s.segments == 0 {
            p.push("sampling.segments must be at least 1".into());
        }
        if s.candidates_per_segment == 0 {
            p.push("sampling.candidates_per_segment must be at least 1".into());
        }
        for intent in Intent::STUDIED {
            match s.targets.get(&intent) {
                Some(0) | None => p.push(format!("sampling.targets.{intent} must be at least 1")),
                Some(_) => {}
            }
        }
        for intent in s.targets.keys().filter(|i| !i.is_studied()) {
            p.push(format!("sampling.targets.{intent}: only informational and navigational queries are studied"));
        }

        let c = &self.collection;
        if !is_token(&c.run_id) {
            p.push(format!("collection.run_id {:?} must be a short token", c.run_id));
        }
        for intent in Intent::STUDIED {
            match c.depth.depth(intent) {
                Some(0) | None => p.push(format!("collection.depth.{intent} must be at least 1")),
                Some(_) => {}
            }
        }
        if c.concurrency == 0 {
            p.push("collection.concurrency must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&c.failure_threshold) {
            p.push("collection.failure_threshold must be within [0, 1]".into());
        }
        if c.timeout_secs == 0 {
            p.push("collection.timeout_secs must be at least 1".into());
        }

        if self.engines.is_empty() {
            p.push("at least one [[engines]] entry is required".into());
        }
        let mut ids = HashSet::new();
        for e in &self.engines {
            p.extend(e.check());
            if !ids.insert(e.engine_id.as_str()) {
                p.push(format!("engine id {} is used twice", e.engine_id));
            }
            if check_files {
                if let AdapterConfig::ReplayFixture { fixture } = &e.adapter {
                    let path = self.fixtures_dir().join(fixture);
                    if !path.is_file() {
                        p.push(format!("engine {}: fixture {} not found", e.engine_id, path.display()));
                    }
                }
            }
        }

        let st = &self.study;
        if st.access_codes.iter().all(|c| c.trim().is_empty()) {
            p.push("study.access_codes needs at least one code".into());
        }
        if st.lease_minutes == 0 {
            p.push("study.lease_minutes must be at least 1".into());
        }
        match decimal_ratio(st.voucher_threshold) {
            Some(r) if r < Ratio::from_integer(1) => {}
            _ => p.push("study.voucher_threshold must be within [0, 1)".into()),
        }
        if st.admin_token.trim().len() < 8 {
            p.push("study.admin_token must be at least 8 characters".into());
        }
        if st.listen.parse::<std::net::SocketAddr>().is_err() {
            p.push(format!("study.listen {:?} is not a socket address", st.listen));
        }

        if check_files {
            for (name, path) in [("paths.log", &self.paths.log), ("paths.labels", &self.paths.labels)] {
                if !self.resolve(path).is_file() {
                    p.push(format!("{name}: {} not found", self.resolve(path).display()));
                }
            }
        }
        p
    }

    pub fn validate(&self, check_files: bool) -> Result<(), ConfigError> {
        let problems = self.problems(check_files);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
version = 1
study_id = "demo"
seed = 42

[paths]
store = "store"
log = "queries.log"
labels = "labels.tsv"

[sampling]
segments = 10
candidates_per_segment = 360
targets = { informational = 100, navigational = 100 }

[collection]
run_id = "run-1"
depth = { informational = 10, navigational = 1 }

[[engines]]
engine_id = "a"
display_name = "Engine A"
adapter = "replay-fixture"
fixture = "a.json"

[study]
access_codes = ["letmein"]
admin_token = "0123456789"
"#;

    fn parse(text: &str) -> StudyConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn defaults_apply() {
        let c = parse(GOOD);
        assert!(c.problems(false).is_empty(), "{:?}", c.problems(false));
        assert_eq!(c.voucher_threshold(), Ratio::new(9, 10));
        assert_eq!(c.study.lease_minutes, 60);
        assert_eq!(c.collection.concurrency, 4);
        assert_eq!(c.sampling.label_mode, LabelMode::Strict);
    }

    #[test]
    fn all_problems_are_reported_together() {
        let bad = GOOD
            .replace("segments = 10", "segments = 0")
            .replace("informational = 10,", "informational = 0,")
            .replace("\"0123456789\"", "\"x\"")
            .replace("engine_id = \"a\"", "engine_id = \"a b\"");
        let problems = parse(&bad).problems(false);
        assert_eq!(problems.len(), 4, "{problems:?}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = GOOD.replace("seed = 42", "seed = 42\nsead = 43");
        assert!(toml::from_str::<StudyConfig>(&bad).is_err());
    }

    #[test]
    fn decimal_ratios_are_exact() {
        assert_eq!(decimal_ratio(0.9), Some(Ratio::new(9, 10)));
        assert_eq!(decimal_ratio(0.95), Some(Ratio::new(19, 20)));
        assert_eq!(decimal_ratio(1.0), Some(Ratio::from_integer(1)));
        assert_eq!(decimal_ratio(-0.1), None);
    }
}
