use serde::{Deserialize, Serialize};

use super::ingest::{FrequencyTable, QueryLogEntry};
use super::SampleError;

/// A contiguous run of the popularity-sorted table holding roughly `T/K`
/// query instances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularitySegment {
    /// 1-based.
    pub index: usize,
    pub entries: Vec<QueryLogEntry>,
    pub instance_count: u64,
}

impl PopularitySegment {
    pub fn distinct_count(&self) -> usize {
        self.entries.len()
    }
}

/// Cut the table into `k` segments of near-equal instance volume.
///
/// Queries are atomic, so a boundary cannot land exactly on `i·T/k` in
/// general. Walking the table in order, a query stays in the current segment
/// `i` as long as that leaves the cumulative count at least as close to
/// `i·T/k` as closing the segment before it would. A segment is also closed
/// early when only one query per remaining segment is left.
pub fn segment_by_popularity(
    table: &FrequencyTable,
    k: usize,
) -> Result<Vec<PopularitySegment>, SampleError> {
    if k == 0 {
        return Err(SampleError::ZeroSegments);
    }
    if table.is_empty() {
        return Err(SampleError::EmptyLog);
    }
    let n = table.distinct();
    if k > n {
        return Err(SampleError::TooFewDistinct {
            distinct: n,
            segments: k,
        });
    }

    let total = table.total_instances() as u128;
    let k128 = k as u128;
    let mut segments = Vec::with_capacity(k);
    let mut current: Vec<QueryLogEntry> = Vec::new();
    let mut current_count: u64 = 0;
    let mut cumulative: u128 = 0;

    for (pos, entry) in table.entries().iter().enumerate() {
        let index = segments.len() + 1;
        if index < k && !current.is_empty() {
            let f = entry.frequency as u128;
            // Distances scaled by k to stay in integers: |k·c − i·T|.
            let target = index as u128 * total;
            let without = (k128 * cumulative).abs_diff(target);
            let with = (k128 * (cumulative + f)).abs_diff(target);
            let remaining = n - pos;
            let must_close = remaining == k - index;
            if must_close || with > without {
                segments.push(PopularitySegment {
                    index,
                    entries: std::mem::take(&mut current),
                    instance_count: current_count,
                });
                current_count = 0;
            }
        }
        current.push(entry.clone());
        current_count += entry.frequency;
        cumulative += entry.frequency as u128;
    }
    segments.push(PopularitySegment {
        index: segments.len() + 1,
        entries: current,
        instance_count: current_count,
    });
    debug_assert_eq!(segments.len(), k);
    Ok(segments)
}
