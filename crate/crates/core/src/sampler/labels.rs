use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ingest::normalize_query;
use super::{Intent, SampleError};

/// Human intent labels, parsed from `query<TAB>intent` lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelFile {
    labels: HashMap<String, Intent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// Any unlabeled candidate fails the operation.
    Strict,
    /// Unlabeled candidates are reported and left out.
    Partial,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledCandidates {
    pub segment_index: usize,
    pub labeled: Vec<(String, Intent)>,
    pub gaps: Vec<String>,
}

impl LabelFile {
    pub fn parse(text: &str) -> Result<Self, SampleError> {
        let mut labels = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (query, token) = line.rsplit_once('\t').ok_or(SampleError::MalformedLabel {
                line: line_no,
                reason: "expected query<TAB>intent".into(),
            })?;
            let intent: Intent = token.trim().parse().map_err(|_| SampleError::UnknownLabel {
                line: line_no,
                token: token.trim().to_string(),
            })?;
            let query = normalize_query(query).ok_or(SampleError::MalformedLabel {
                line: line_no,
                reason: "empty query".into(),
            })?;
            if let Some(prev) = labels.insert(query.clone(), intent) {
                if prev != intent {
                    return Err(SampleError::MalformedLabel {
                        line: line_no,
                        reason: format!("conflicting labels for {query:?}: {prev} and {intent}"),
                    });
                }
            }
        }
        Ok(Self { labels })
    }

    pub fn get(&self, query: &str) -> Option<Intent> {
        self.labels.get(query).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn apply_intent_labels(
    segment_index: usize,
    candidates: &[String],
    labels: &LabelFile,
    mode: LabelMode,
) -> Result<LabeledCandidates, SampleError> {
    let mut labeled = Vec::with_capacity(candidates.len());
    let mut gaps = Vec::new();
    for c in candidates {
        match labels.get(c) {
            Some(intent) => labeled.push((c.clone(), intent)),
            None => gaps.push(c.clone()),
        }
    }
    if mode == LabelMode::Strict && !gaps.is_empty() {
        return Err(SampleError::MissingLabels { missing: gaps });
    }
    Ok(LabeledCandidates {
        segment_index,
        labeled,
        gaps,
    })
}

/// Rule-based hint for the labeling template. Only URL-shaped queries get a
/// hint; it pre-fills the template and never overrides a human label.
pub fn prelabel_hint(query: &str) -> Option<Intent> {
    let q = query.trim();
    if q.contains(' ') {
        return None;
    }
    let url_like = q.starts_with("http://")
        || q.starts_with("https://")
        || q.starts_with("www.")
        || [".de", ".com", ".org", ".net", ".at", ".ch", ".eu", ".info"]
            .iter()
            .any(|tld| q.ends_with(tld) || q.contains(&format!("{tld}/")));
    url_like.then_some(Intent::Navigational)
}

/// Label template for candidates: hinted queries are pre-filled, the rest are
/// commented out for a human to complete.
pub fn render_label_template(candidates: &[(usize, Vec<String>)]) -> String {
    let mut out = String::from(
        "# query<TAB>intent, intent one of: informational navigational transactional other\n",
    );
    for (segment, queries) in candidates {
        out.push_str(&format!("# segment {segment}\n"));
        for q in queries {
            match prelabel_hint(q) {
                Some(hint) => out.push_str(&format!("{q}\t{hint}\n")),
                None => out.push_str(&format!("#{q}\t\n")),
            }
        }
    }
    out
}
