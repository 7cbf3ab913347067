//! Popularity-stratified, intent-labeled query sampling from a query log.
//!
//! The pipeline is: [`ingest_log`] builds a popularity-sorted frequency
//! table, [`segment_by_popularity`] cuts it into K strata of (nearly) equal
//! query volume, [`draw_candidates`] draws uniformly among the distinct
//! queries of each stratum, humans label the candidates with an [`Intent`],
//! and [`build_sample`] down-samples each (segment, intent) cell to a target.

mod draw;
mod ingest;
mod labels;
mod segment;
pub mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use draw::{build_sample, draw_candidates, Sample, SampledQuery, Shortfall};
pub use ingest::{ingest_log, normalize_query, FrequencyTable, IngestReport, LogFormat, QueryLogEntry, Reject};
pub use labels::{
    apply_intent_labels, prelabel_hint, render_label_template, LabelFile, LabelMode,
    LabeledCandidates,
};
pub use segment::{segment_by_popularity, PopularitySegment};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SampleError {
    #[error("empty log")]
    EmptyLog,
    #[error("io: {0}")]
    Io(String),
    #[error("segment count must be at least 1")]
    ZeroSegments,
    #[error("too few distinct queries: {distinct} distinct for {segments} segments")]
    TooFewDistinct { distinct: usize, segments: usize },
    #[error("line {line}: unknown label {token:?}")]
    UnknownLabel { line: usize, token: String },
    #[error("line {line}: {reason}")]
    MalformedLabel { line: usize, reason: String },
    #[error("{} candidate(s) have no intent label", missing.len())]
    MissingLabels { missing: Vec<String> },
    #[error("line {line}: {reason}")]
    MalformedSample { line: usize, reason: String },
}

impl From<std::io::Error> for SampleError {
    fn from(e: std::io::Error) -> Self {
        SampleError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intent {
    Informational,
    Navigational,
    Transactional,
    Other,
}

impl Intent {
    pub const ALL: [Intent; 4] = [
        Intent::Informational,
        Intent::Navigational,
        Intent::Transactional,
        Intent::Other,
    ];

    /// Intents that are admitted to a study.
    pub const STUDIED: [Intent; 2] = [Intent::Informational, Intent::Navigational];

    pub fn as_str(self) -> &'static str {
        match self {
            Intent::Informational => "informational",
            Intent::Navigational => "navigational",
            Intent::Transactional => "transactional",
            Intent::Other => "other",
        }
    }

    pub fn is_studied(self) -> bool {
        matches!(self, Intent::Informational | Intent::Navigational)
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label {0:?}")]
pub struct UnknownIntent(pub String);

impl FromStr for Intent {
    type Err = UnknownIntent;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Intent::ALL
            .into_iter()
            .find(|i| i.as_str() == s)
            .ok_or_else(|| UnknownIntent(s.to_string()))
    }
}
