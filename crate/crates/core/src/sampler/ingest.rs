use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::SampleError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    /// One query instance per line.
    Instances,
    /// `query<TAB>count` per line.
    Aggregate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryLogEntry {
    pub text: String,
    pub frequency: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
}

/// Distinct normalized queries sorted by frequency descending, then text
/// ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    entries: Vec<QueryLogEntry>,
    total: u64,
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub table: FrequencyTable,
    pub rejects: Vec<Reject>,
}

/// Trim, collapse internal whitespace to single spaces, case-fold.
/// Returns `None` when nothing is left.
pub fn normalize_query(raw: &str) -> Option<String> {
    let mut out = String::with_capacity(raw.len());
    for word in raw.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&word.to_lowercase());
    }
    (!out.is_empty()).then_some(out)
}

pub fn ingest_log<R: BufRead>(reader: R, format: LogFormat) -> Result<IngestReport, SampleError> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut rejects = Vec::new();

    for (idx, line) in reader.split(b'\n').enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.strip_suffix(b"\r").unwrap_or(&line);
        let Ok(line) = std::str::from_utf8(line) else {
            rejects.push(Reject {
                line: lineno,
                reason: "invalid UTF-8".into(),
            });
            continue;
        };
        let parsed = match format {
            LogFormat::Instances => normalize_query(line)
                .map(|q| (q, 1))
                .ok_or_else(|| "empty query".to_string()),
            LogFormat::Aggregate => parse_aggregate(line),
        };
        match parsed {
            Ok((query, n)) => {
                let slot = counts.entry(query).or_insert(0);
                *slot = slot.saturating_add(n);
            }
            Err(reason) => rejects.push(Reject {
                line: lineno,
                reason,
            }),
        }
    }

    if counts.is_empty() {
        return Err(SampleError::EmptyLog);
    }
    let entries = counts
        .into_iter()
        .map(|(text, frequency)| QueryLogEntry { text, frequency })
        .collect();
    Ok(IngestReport {
        table: FrequencyTable::from_entries(entries),
        rejects,
    })
}

fn parse_aggregate(line: &str) -> Result<(String, u64), String> {
    let (query, count) = line
        .split_once('\t')
        .ok_or_else(|| "expected query<TAB>count".to_string())?;
    if count.contains('\t') {
        return Err("too many fields".into());
    }
    let query = normalize_query(query).ok_or_else(|| "empty query".to_string())?;
    let count: u64 = count
        .trim()
        .parse()
        .map_err(|_| format!("bad count {count:?}"))?;
    if count == 0 {
        return Err("count must be positive".into());
    }
    Ok((query, count))
}

impl FrequencyTable {
    /// Sorts into popularity order. Texts must already be unique.
    pub fn from_entries(mut entries: Vec<QueryLogEntry>) -> Self {
        entries.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.text.cmp(&b.text)));
        let total = entries.iter().map(|e| e.frequency).sum();
        Self { entries, total }
    }

    pub fn entries(&self) -> &[QueryLogEntry] {
        &self.entries
    }

    pub fn total_instances(&self) -> u64 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `query<TAB>count` lines in table order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.text);
            out.push('\t');
            out.push_str(&e.frequency.to_string());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(report: &IngestReport) -> Vec<(&str, u64)> {
        report
            .table
            .entries()
            .iter()
            .map(|e| (e.text.as_str(), e.frequency))
            .collect()
    }

    #[test]
    fn counts_instance_lines() {
        let r = ingest_log("a\nb\na\nc\na\nb\n".as_bytes(), LogFormat::Instances).unwrap();
        assert_eq!(table(&r), vec![("a", 3), ("b", 2), ("c", 1)]);
        assert_eq!(r.table.total_instances(), 6);
    }

    #[test]
    fn aggregate_ties_break_lexicographically() {
        let r = ingest_log("y\t5\nx\t5\n".as_bytes(), LogFormat::Aggregate).unwrap();
        assert_eq!(table(&r), vec![("x", 5), ("y", 5)]);
    }

    #[test]
    fn normalization_merges_variants() {
        let r = ingest_log(
            "  Hamburg  Wetter\nhamburg wetter\nHAMBURG\tWETTER\r\n".as_bytes(),
            LogFormat::Instances,
        )
        .unwrap();
        assert_eq!(table(&r), vec![("hamburg wetter", 3)]);
        assert_eq!(normalize_query(" \t "), None);
    }

    #[test]
    fn malformed_lines_are_reported_not_fatal() {
        let r = ingest_log(
            "ok\t3\nno-tab\nbad\tx\nzero\t0\n\t4\na\tb\tc\nok\t2\n".as_bytes(),
            LogFormat::Aggregate,
        )
        .unwrap();
        assert_eq!(table(&r), vec![("ok", 5)]);
        assert_eq!(
            r.rejects.iter().map(|r| r.line).collect::<Vec<_>>(),
            vec![2, 3, 4, 5, 6]
        );
    }

    #[test]
    fn blank_instance_lines_are_rejected() {
        let r = ingest_log("a\n\n  \nb\n".as_bytes(), LogFormat::Instances).unwrap();
        assert_eq!(r.rejects.len(), 2);
        assert_eq!(r.table.total_instances(), 2);
    }

    #[test]
    fn invalid_utf8_is_a_reject() {
        let r = ingest_log(&b"a\n\xff\xfe\na\n"[..], LogFormat::Instances).unwrap();
        assert_eq!(r.rejects, vec![Reject { line: 2, reason: "invalid UTF-8".into() }]);
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert_eq!(
            ingest_log("".as_bytes(), LogFormat::Instances).unwrap_err(),
            SampleError::EmptyLog
        );
        assert_eq!(
            ingest_log("\n\n".as_bytes(), LogFormat::Instances).unwrap_err(),
            SampleError::EmptyLog
        );
    }
}
