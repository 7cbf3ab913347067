//! Effectiveness measures over unpooled judgments. All arithmetic is exact;
//! a measure with an empty denominator is `None`, never zero.

mod report;

use std::collections::HashSet;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::collector::CollectionRun;
use crate::study::{Binary, NavigationalVerdict};

pub use report::{
    build_report, render_exports, unpool, Coverage, EngineReport, GradedRow, MetricsReport,
    NavSummary, OverlapRow, PrecisionRow, Value, REPORT_SCHEMA,
};

pub type Frac = Ratio<u64>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("no verdicts for engine {0}")]
    NoVerdicts(String),
    #[error("query {0:?} has more than one correct result")]
    MultipleTargets(String),
    #[error("judgment references pooled result {0} outside its task")]
    Dangling(String),
    #[error("task {task} does not match the run: {reason}")]
    Mismatch { task: String, reason: String },
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedEntry {
    pub rank: usize,
    pub binary: Option<Binary>,
    pub graded: Option<u8>,
    pub skipped: bool,
    /// A document was stored for this result.
    pub available: bool,
}

impl JudgedEntry {
    fn binary_judged(&self) -> bool {
        !self.skipped && self.binary.is_some()
    }

    fn relevant(&self) -> bool {
        !self.skipped && self.binary == Some(Binary::Relevant)
    }

    fn grade(&self) -> Option<u8> {
        if self.skipped {
            None
        } else {
            self.graded
        }
    }
}

/// One engine's ranked list for one query with the judgments attached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedResultList {
    pub engine_id: String,
    pub query: String,
    pub entries: Vec<JudgedEntry>,
}

fn ratio(num: u64, den: u64) -> Option<Frac> {
    (den > 0).then(|| Ratio::new(num, den))
}

fn mean(values: impl IntoIterator<Item = Frac>) -> Option<Frac> {
    let mut n = 0u64;
    let mut sum = Frac::from_integer(0);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n)
}

/// (relevant, binary-judged) among entries at ranks <= k.
fn binary_counts(list: &JudgedResultList, k: usize) -> (u64, u64) {
    list.entries
        .iter()
        .filter(|e| e.rank <= k && e.binary_judged())
        .fold((0, 0), |(r, j), e| (r + e.relevant() as u64, j + 1))
}

pub fn precision_at_k(list: &JudgedResultList, k: usize) -> Result<Option<Frac>, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    let (r, j) = binary_counts(list, k);
    Ok(ratio(r, j))
}

/// Pooled over all lists: relevant at ranks <= k over judged at ranks <= k.
pub fn precision_micro(lists: &[JudgedResultList], k: usize) -> Option<Frac> {
    let (r, j) = lists
        .iter()
        .map(|l| binary_counts(l, k))
        .fold((0, 0), |(a, b), (r, j)| (a + r, b + j));
    ratio(r, j)
}

/// Mean of the per-query precision over queries where it is defined.
pub fn precision_macro(lists: &[JudgedResultList], k: usize) -> Option<Frac> {
    mean(lists.iter().filter_map(|l| {
        let (r, j) = binary_counts(l, k);
        ratio(r, j)
    }))
}

pub fn overall_relevant_ratio(lists: &[JudgedResultList]) -> Option<Frac> {
    precision_micro(lists, usize::MAX)
}

pub fn overall_relevant_macro(lists: &[JudgedResultList]) -> Option<Frac> {
    precision_macro(lists, usize::MAX)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradedByPosition {
    pub by_position: Vec<Option<Frac>>,
    pub cumulative: Vec<Option<Frac>>,
    pub counts: Vec<u64>,
}

pub fn mean_graded_by_position(lists: &[JudgedResultList], max_rank: usize) -> GradedByPosition {
    let mut sums = vec![0u64; max_rank];
    let mut counts = vec![0u64; max_rank];
    for e in lists.iter().flat_map(|l| &l.entries) {
        if let (Some(g), true) = (e.grade(), (1..=max_rank).contains(&e.rank)) {
            sums[e.rank - 1] += g as u64;
            counts[e.rank - 1] += 1;
        }
    }
    let by_position = sums.iter().zip(&counts).map(|(&s, &c)| ratio(s, c)).collect();
    let (mut s, mut c) = (0, 0);
    let cumulative = sums
        .iter()
        .zip(&counts)
        .map(|(&si, &ci)| {
            s += si;
            c += ci;
            ratio(s, c)
        })
        .collect();
    GradedByPosition {
        by_position,
        cumulative,
        counts,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradeHistogram {
    pub counts: [u64; 5],
    pub ratios: [Option<Frac>; 5],
}

pub fn grade_distribution(lists: &[JudgedResultList]) -> GradeHistogram {
    let mut counts = [0u64; 5];
    for g in lists.iter().flat_map(|l| &l.entries).filter_map(|e| e.grade()) {
        counts[g as usize] += 1;
    }
    let total: u64 = counts.iter().sum();
    GradeHistogram {
        counts,
        ratios: counts.map(|c| ratio(c, total)),
    }
}

/// Correct verdicts over all verdicts for the engine; queries where the
/// engine returned nothing carry an incorrect verdict.
pub fn navigational_success_rate(
    verdicts: &[NavigationalVerdict],
    engine_id: &str,
) -> Result<Frac, MetricsError> {
    let mine: Vec<_> = verdicts.iter().filter(|v| v.engine_id == engine_id).collect();
    let correct = mine.iter().filter(|v| v.correct).count() as u64;
    ratio(correct, mine.len() as u64).ok_or_else(|| MetricsError::NoVerdicts(engine_id.to_string()))
}

/// Ranked list for a navigational query; `targets[i]` flags rank i+1 as the
/// correct page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NavTargetList {
    pub query: String,
    pub targets: Vec<bool>,
}

impl NavTargetList {
    fn target_rank(&self) -> Result<Option<usize>, MetricsError> {
        let mut hits = self.targets.iter().enumerate().filter(|(_, t)| **t);
        let first = hits.next().map(|(i, _)| i + 1);
        if hits.next().is_some() {
            return Err(MetricsError::MultipleTargets(self.query.clone()));
        }
        Ok(first)
    }
}

pub fn success_at_n(lists: &[NavTargetList], n: usize) -> Result<Option<Frac>, MetricsError> {
    if n == 0 {
        return Err(MetricsError::ZeroK);
    }
    let mut hit = 0;
    for l in lists {
        if l.target_rank()?.is_some_and(|r| r <= n) {
            hit += 1;
        }
    }
    Ok(ratio(hit, lists.len() as u64))
}

pub fn mean_reciprocal_rank(lists: &[NavTargetList]) -> Result<Option<Frac>, MetricsError> {
    let mut rr = Vec::with_capacity(lists.len());
    for l in lists {
        rr.push(match l.target_rank()? {
            Some(r) => Ratio::new(1, r as u64),
            None => Frac::from_integer(0),
        });
    }
    Ok(mean(rr))
}

/// |A ∩ B| / |A ∪ B| over distinct URLs; `None` when both are empty.
pub fn jaccard<S: AsRef<str>>(a: &[S], b: &[S]) -> Option<Frac> {
    let a: HashSet<&str> = a.iter().map(AsRef::as_ref).collect();
    let b: HashSet<&str> = b.iter().map(AsRef::as_ref).collect();
    let union = a.union(&b).count() as u64;
    ratio(a.intersection(&b).count() as u64, union)
}

/// Mean per-query overlap of the two engines' top-k normalized URLs, over
/// queries both engines answered.
pub fn url_overlap(
    run: &CollectionRun,
    engine_a: &str,
    engine_b: &str,
    k: usize,
) -> (Option<Frac>, usize) {
    let top = |query: &str, engine: &str| -> Option<Vec<String>> {
        let c = run.capture(query, engine).filter(|c| c.succeeded())?;
        Some(
            c.results()
                .iter()
                .take(k)
                .filter_map(|r| r.normalized_url.clone())
                .collect(),
        )
    };
    let per_query: Vec<Frac> = run
        .queries(crate::sampler::Intent::Informational)
        .into_iter()
        .filter_map(|q| jaccard(&top(q, engine_a)?, &top(q, engine_b)?))
        .collect();
    let n = per_query.len();
    (mean(per_query), n)
}
