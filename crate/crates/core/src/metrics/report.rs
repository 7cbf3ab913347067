use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize, Serializer};

use super::{
    grade_distribution, mean_graded_by_position, mean_reciprocal_rank, navigational_success_rate,
    overall_relevant_macro, overall_relevant_ratio, precision_macro, precision_micro,
    success_at_n, url_overlap, Frac, JudgedEntry, JudgedResultList, MetricsError, NavTargetList,
};
use crate::collector::{CaptureOutcome, CollectionRun};
use crate::sampler::Intent;
use crate::study::{Judgment, StudyOutcome};

pub const REPORT_SCHEMA: &str = "serpeval-report/1";

const MAX_K: usize = 10;

/// An exact measure, or the absent marker when it is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub struct Value(pub Option<Frac>);

impl Value {
    pub fn decimal(&self) -> String {
        match self.0 {
            Some(v) => decimal(v, 6),
            None => "NA".into(),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Exact {
            exact: String,
            decimal: String,
        }
        match self.0 {
            None => s.serialize_none(),
            Some(v) => Exact {
                exact: format!("{}/{}", v.numer(), v.denom()),
                decimal: decimal(v, 6),
            }
            .serialize(s),
        }
    }
}

/// Round half up to `places` decimals.
fn decimal(v: Frac, places: u32) -> String {
    let scale = 10u128.pow(places);
    let (n, d) = (*v.numer() as u128, *v.denom() as u128);
    let mut q = n * scale / d;
    if 2 * (n * scale % d) >= d {
        q += 1;
    }
    format!("{}.{:0width$}", q / scale, q % scale, width = places as usize)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PrecisionRow {
    pub k: usize,
    pub micro: Value,
    #[serde(rename = "macro")]
    pub macro_: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GradedRow {
    pub rank: usize,
    pub graded: u64,
    pub mean: Value,
    pub cumulative: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NavSummary {
    pub verdicts: usize,
    pub correct: usize,
    pub success_rate: Value,
    /// success@n for n = 1 ..= navigational depth.
    pub success_at: Vec<Value>,
    pub mrr: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Coverage {
    pub queries_answered: usize,
    pub results: usize,
    pub binary_judged: usize,
    pub graded: usize,
    pub skipped: usize,
    pub unjudged: usize,
    pub unavailable: usize,
    pub failed_captures: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EngineReport {
    pub engine_id: String,
    pub display_name: String,
    pub overall_relevant: Value,
    pub overall_relevant_macro: Value,
    pub precision: Vec<PrecisionRow>,
    pub graded: Vec<GradedRow>,
    pub grade_counts: [u64; 5],
    pub grade_ratios: [Value; 5],
    pub navigational: NavSummary,
    pub coverage: Coverage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OverlapRow {
    pub engine_a: String,
    pub engine_b: String,
    pub k: usize,
    pub queries: usize,
    pub overlap: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetricsReport {
    pub schema: String,
    pub run_id: String,
    pub seed: u64,
    pub engines: Vec<EngineReport>,
    pub overlap: Vec<OverlapRow>,
    /// Informational queries without a completed task.
    pub unanswered: Vec<String>,
    pub warnings: Vec<String>,
}

/// Re-attach each completed task's judgments to every engine position its
/// pooled results came from.
pub fn unpool(
    run: &CollectionRun,
    outcome: &StudyOutcome,
) -> Result<BTreeMap<String, Vec<JudgedResultList>>, MetricsError> {
    let mut lists: BTreeMap<String, Vec<JudgedResultList>> = run
        .engines
        .iter()
        .map(|e| (e.engine_id.clone(), Vec::new()))
        .collect();
    for task in &outcome.tasks {
        let Some(judgments) = outcome.judgments.get(&task.task_id) else {
            continue;
        };
        let by_pooled: HashMap<&str, &Judgment> = judgments
            .iter()
            .map(|j| {
                if task.result(&j.pooled_id).is_none() {
                    return Err(MetricsError::Dangling(j.pooled_id.clone()));
                }
                Ok((j.pooled_id.as_str(), j))
            })
            .collect::<Result<_, _>>()?;
        let by_key: HashMap<&str, _> = task.results.iter().map(|r| (r.key.as_str(), r)).collect();
        for engine in &run.engines {
            let Some(capture) = run.capture(&task.query, &engine.engine_id) else {
                continue;
            };
            if !capture.succeeded() {
                continue;
            }
            let mut entries = Vec::new();
            for r in capture.results() {
                let key = match &r.normalized_url {
                    Some(u) => u.clone(),
                    None => format!("raw:{}", r.raw_url),
                };
                let pooled = by_key.get(key.as_str()).ok_or_else(|| MetricsError::Mismatch {
                    task: task.task_id.clone(),
                    reason: format!("{key} is not pooled"),
                })?;
                let j = by_pooled.get(pooled.pooled_id.as_str());
                entries.push(JudgedEntry {
                    rank: r.rank,
                    binary: j.and_then(|j| j.binary),
                    graded: j.and_then(|j| j.graded),
                    skipped: j.is_some_and(|j| j.skipped),
                    available: pooled.judgeable,
                });
            }
            lists
                .get_mut(&engine.engine_id)
                .expect("engine listed")
                .push(JudgedResultList {
                    engine_id: engine.engine_id.clone(),
                    query: task.query.clone(),
                    entries,
                });
        }
    }
    Ok(lists)
}

fn coverage(run: &CollectionRun, engine_id: &str, lists: &[JudgedResultList]) -> Coverage {
    let mut c = Coverage {
        queries_answered: lists.len(),
        failed_captures: run
            .captures
            .iter()
            .filter(|cap| cap.engine_id == engine_id && !cap.succeeded())
            .count(),
        ..Coverage::default()
    };
    for e in lists.iter().flat_map(|l| &l.entries) {
        c.results += 1;
        if !e.available {
            c.unavailable += 1;
        }
        if e.skipped {
            c.skipped += 1;
        } else if e.binary.is_none() && e.graded.is_none() {
            c.unjudged += 1;
        }
        if e.binary.is_some() {
            c.binary_judged += 1;
        }
        if e.graded.is_some() {
            c.graded += 1;
        }
    }
    c
}

fn nav_lists(run: &CollectionRun, outcome: &StudyOutcome, engine_id: &str) -> Vec<NavTargetList> {
    outcome
        .verdicts
        .iter()
        .filter(|v| v.engine_id == engine_id)
        .map(|v| {
            let len = match run.capture(&v.query, engine_id).map(|c| &c.outcome) {
                Some(CaptureOutcome::Succeeded { results, .. }) => results.len(),
                _ => 0,
            };
            // Only the first result is assessed.
            let mut targets = vec![false; len];
            if let Some(first) = targets.first_mut() {
                *first = v.correct;
            }
            NavTargetList {
                query: v.query.clone(),
                targets,
            }
        })
        .collect()
}

pub fn build_report(
    run: &CollectionRun,
    outcome: &StudyOutcome,
    seed: u64,
) -> Result<MetricsReport, MetricsError> {
    for t in &outcome.tasks {
        if !run.captures.iter().any(|c| c.query == t.query && c.intent == t.intent) {
            return Err(MetricsError::Mismatch {
                task: t.task_id.clone(),
                reason: format!("query {:?} is not in run {}", t.query, run.run_id),
            });
        }
    }
    let lists = unpool(run, outcome)?;
    let nav_depth = run.depth_policy.depth(Intent::Navigational).unwrap_or(1).max(1);
    let mut warnings = Vec::new();

    let mut engines = Vec::new();
    for e in &run.engines {
        let l = &lists[&e.engine_id];
        let graded = mean_graded_by_position(l, MAX_K);
        let hist = grade_distribution(l);
        let nav = nav_lists(run, outcome, &e.engine_id);
        let success_rate = match navigational_success_rate(&outcome.verdicts, &e.engine_id) {
            Ok(v) => Some(v),
            Err(err) => {
                if !run.queries(Intent::Navigational).is_empty() {
                    warnings.push(err.to_string());
                }
                None
            }
        };
        engines.push(EngineReport {
            engine_id: e.engine_id.clone(),
            display_name: e.display_name.clone(),
            overall_relevant: Value(overall_relevant_ratio(l)),
            overall_relevant_macro: Value(overall_relevant_macro(l)),
            precision: (1..=MAX_K)
                .map(|k| PrecisionRow {
                    k,
                    micro: Value(precision_micro(l, k)),
                    macro_: Value(precision_macro(l, k)),
                })
                .collect(),
            graded: (0..MAX_K)
                .map(|i| GradedRow {
                    rank: i + 1,
                    graded: graded.counts[i],
                    mean: Value(graded.by_position[i]),
                    cumulative: Value(graded.cumulative[i]),
                })
                .collect(),
            grade_counts: hist.counts,
            grade_ratios: hist.ratios.map(Value),
            navigational: NavSummary {
                verdicts: nav.len(),
                correct: nav.iter().filter(|n| n.targets.first() == Some(&true)).count(),
                success_rate: Value(success_rate),
                success_at: (1..=nav_depth)
                    .map(|n| success_at_n(&nav, n).map(Value))
                    .collect::<Result<_, _>>()?,
                mrr: Value(mean_reciprocal_rank(&nav)?),
            },
            coverage: coverage(run, &e.engine_id, l),
        });
    }

    let k = run.depth_policy.depth(Intent::Informational).unwrap_or(MAX_K);
    let mut overlap = Vec::new();
    for (i, a) in run.engines.iter().enumerate() {
        for b in &run.engines[i + 1..] {
            let (v, queries) = url_overlap(run, &a.engine_id, &b.engine_id, k);
            overlap.push(OverlapRow {
                engine_a: a.engine_id.clone(),
                engine_b: b.engine_id.clone(),
                k,
                queries,
                overlap: Value(v),
            });
        }
    }

    let unanswered: Vec<String> = outcome
        .tasks
        .iter()
        .filter(|t| !outcome.judgments.contains_key(&t.task_id))
        .map(|t| t.query.clone())
        .collect();
    if !unanswered.is_empty() {
        warnings.push(format!(
            "{} of {} informational queries have no completed judgments",
            unanswered.len(),
            outcome.tasks.len()
        ));
    }
    let nav_expected = run.queries(Intent::Navigational).len() * run.engines.len();
    if outcome.verdicts.len() < nav_expected {
        warnings.push(format!(
            "{} of {} navigational verdicts recorded",
            outcome.verdicts.len(),
            nav_expected
        ));
    }

    Ok(MetricsReport {
        schema: REPORT_SCHEMA.into(),
        run_id: run.run_id.clone(),
        seed,
        engines,
        overlap,
        unanswered,
        warnings,
    })
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Export files by name: one table per measure family plus `report.json`.
pub fn render_exports(report: &MetricsReport) -> BTreeMap<String, Vec<u8>> {
    let id = || vec![report.run_id.clone(), report.seed.to_string()];
    let mut out = BTreeMap::new();

    let mut rows = Vec::new();
    for e in &report.engines {
        let mut r = id();
        r.extend([e.engine_id.clone(), "all".into(), e.overall_relevant.decimal(), e.overall_relevant_macro.decimal()]);
        rows.push(r);
        for p in &e.precision {
            let mut r = id();
            r.extend([e.engine_id.clone(), p.k.to_string(), p.micro.decimal(), p.macro_.decimal()]);
            rows.push(r);
        }
    }
    out.insert(
        "precision.csv".into(),
        csv_bytes(&["run_id", "seed", "engine_id", "k", "precision_micro", "precision_macro"], rows),
    );

    let mut rows = Vec::new();
    for e in &report.engines {
        for g in &e.graded {
            let mut r = id();
            r.extend([e.engine_id.clone(), g.rank.to_string(), g.graded.to_string(), g.mean.decimal(), g.cumulative.decimal()]);
            rows.push(r);
        }
    }
    out.insert(
        "graded.csv".into(),
        csv_bytes(&["run_id", "seed", "engine_id", "rank", "graded", "mean_grade", "cumulative_mean_grade"], rows),
    );

    let mut rows = Vec::new();
    for e in &report.engines {
        for grade in 0..5 {
            let mut r = id();
            r.extend([e.engine_id.clone(), grade.to_string(), e.grade_counts[grade].to_string(), e.grade_ratios[grade].decimal()]);
            rows.push(r);
        }
    }
    out.insert(
        "histogram.csv".into(),
        csv_bytes(&["run_id", "seed", "engine_id", "grade", "count", "ratio"], rows),
    );

    let mut rows = Vec::new();
    for e in &report.engines {
        let n = &e.navigational;
        let mut push = |measure: &str, at: String, v: String| {
            let mut r = id();
            r.extend([e.engine_id.clone(), measure.into(), at, v]);
            rows.push(r);
        };
        push("verdicts", String::new(), n.verdicts.to_string());
        push("correct", String::new(), n.correct.to_string());
        push("success_rate", String::new(), n.success_rate.decimal());
        for (i, s) in n.success_at.iter().enumerate() {
            push("success_at", (i + 1).to_string(), s.decimal());
        }
        push("mrr", String::new(), n.mrr.decimal());
    }
    out.insert(
        "navigational.csv".into(),
        csv_bytes(&["run_id", "seed", "engine_id", "measure", "n", "value"], rows),
    );

    let rows = report
        .overlap
        .iter()
        .map(|o| {
            let mut r = id();
            r.extend([o.engine_a.clone(), o.engine_b.clone(), o.k.to_string(), o.queries.to_string(), o.overlap.decimal()]);
            r
        })
        .collect();
    out.insert(
        "overlap.csv".into(),
        csv_bytes(&["run_id", "seed", "engine_a", "engine_b", "k", "queries", "overlap"], rows),
    );

    let rows = report
        .engines
        .iter()
        .map(|e| {
            let c = &e.coverage;
            let mut r = id();
            r.extend(
                [
                    c.queries_answered,
                    c.results,
                    c.binary_judged,
                    c.graded,
                    c.skipped,
                    c.unjudged,
                    c.unavailable,
                    c.failed_captures,
                ]
                .map(|n| n.to_string()),
            );
            r.insert(2, e.engine_id.clone());
            r
        })
        .collect();
    out.insert(
        "coverage.csv".into(),
        csv_bytes(
            &[
                "run_id", "seed", "engine_id", "queries_answered", "results", "binary_judged",
                "graded", "skipped", "unjudged", "unavailable", "failed_captures",
            ],
            rows,
        ),
    );

    let mut json = serde_json::to_vec_pretty(report).expect("report serializes");
    json.push(b'\n');
    out.insert("report.json".into(), json);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    #[test]
    fn decimals_round_half_up() {
        assert_eq!(decimal(Ratio::new(4, 9), 6), "0.444444");
        assert_eq!(decimal(Ratio::new(2, 3), 6), "0.666667");
        assert_eq!(decimal(Ratio::new(1, 1), 6), "1.000000");
        assert_eq!(decimal(Ratio::new(1, 8), 2), "0.13");
        assert_eq!(Value(None).decimal(), "NA");
    }
}
