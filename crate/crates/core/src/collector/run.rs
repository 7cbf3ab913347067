//! Collection runs: every (query, engine) pair attempted exactly once,
//! recorded in an append-only ledger so an interrupted run resumes where it
//! stopped.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::adapter::{collect_serp, DocumentFetcher, Engine};
use super::url::TrackingPattern;
use super::{
    CaptureOutcome, CaptureRecord, CollectError, CollectionRun, DepthPolicy, DocumentSnapshot,
    EngineSummary, FetchStatus, Resolution, RunLedger, RunStatus,
};
use crate::clock::Clock;
use crate::sampler::{Intent, SampledQuery};
use crate::store::{AppendLog, Family, FsStore, RecordStore, RecordStoreExt, StoreError};

pub struct RunContext<'a> {
    pub store: &'a FsStore,
    pub run_id: String,
    /// Identifies the sample the run was built from (store key).
    pub sample_ref: String,
    pub clock: &'a dyn Clock,
    pub tracking: Vec<TrackingPattern>,
}

/// Simulated interruption, for crash and resume harnesses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interrupt {
    /// Stop handing out work; in-flight captures finish.
    Stop,
    /// Abort the process right after the append.
    Abort,
    /// Abort the process halfway through writing the append.
    AbortTorn,
}

#[derive(Debug, Clone)]
pub struct CollectionOptions {
    pub depth_policy: DepthPolicy,
    pub concurrency: usize,
    /// Failure ratio above which the run is marked degraded.
    pub failure_threshold: f64,
    /// Interrupt once this many ledger appends (captures and snapshots)
    /// have been made by this invocation.
    pub interrupt_after: Option<(usize, Interrupt)>,
}

impl Default for CollectionOptions {
    fn default() -> Self {
        Self {
            depth_policy: DepthPolicy::default(),
            concurrency: 4,
            failure_threshold: 0.2,
            interrupt_after: None,
        }
    }
}

fn ledger_key(run_id: &str) -> String {
    format!("{run_id}/ledger.jsonl")
}

fn snapshots_key(run_id: &str) -> String {
    format!("{run_id}/snapshots.jsonl")
}

fn run_key(run_id: &str) -> String {
    format!("{run_id}/run.json")
}

pub fn load_run(store: &FsStore, run_id: &str) -> Result<CollectionRun, StoreError> {
    store
        .get_json(Family::Runs, &run_key(run_id))?
        .ok_or_else(|| StoreError::NotFound(format!("run {run_id}")))
}

struct Appender<'a> {
    captures: &'a AppendLog<CaptureRecord>,
    snapshots: &'a AppendLog<DocumentSnapshot>,
    count: AtomicUsize,
    plan: Option<(usize, Interrupt)>,
    stop: &'a AtomicBool,
}

impl Appender<'_> {
    /// Number this append. Taken before writing so concurrent workers cannot
    /// both step over the interrupt point.
    fn ticket(&self) -> usize {
        self.count.fetch_add(1, Ordering::SeqCst) + 1
    }

    fn torn(&self, ticket: usize) -> bool {
        matches!(self.plan, Some((n, Interrupt::AbortTorn)) if ticket == n)
    }

    fn after(&self, ticket: usize) {
        match self.plan {
            Some((n, Interrupt::Abort)) if ticket == n => std::process::abort(),
            Some((n, Interrupt::Stop)) if ticket >= n => self.stop.store(true, Ordering::SeqCst),
            _ => {}
        }
    }

    fn capture(&self, rec: &CaptureRecord) -> Result<(), StoreError> {
        let ticket = self.ticket();
        if self.torn(ticket) {
            self.captures.append_torn(rec)?;
            std::process::abort();
        }
        self.captures.append(rec)?;
        self.after(ticket);
        Ok(())
    }

    fn snapshot(&self, snap: &DocumentSnapshot) -> Result<(), StoreError> {
        let ticket = self.ticket();
        if self.torn(ticket) {
            self.snapshots.append_torn(snap)?;
            std::process::abort();
        }
        self.snapshots.append(snap)?;
        self.after(ticket);
        Ok(())
    }
}

type SnapshotSlot = Arc<Mutex<Option<DocumentSnapshot>>>;

/// Run (or resume) a collection. Pairs already in the ledger are skipped;
/// the materialized run is written to `runs/<run_id>/run.json`.
pub fn run_collection(
    ctx: &RunContext<'_>,
    sample: &[SampledQuery],
    engines: &[Engine],
    fetcher: &dyn DocumentFetcher,
    opts: &CollectionOptions,
) -> Result<CollectionRun, CollectError> {
    if sample.is_empty() {
        return Err(CollectError::Config("empty sample".into()));
    }
    if engines.is_empty() {
        return Err(CollectError::Config("no engines".into()));
    }
    let mut ids = HashSet::new();
    for e in engines {
        if !ids.insert(e.id()) {
            return Err(CollectError::Config(format!("duplicate engine id {}", e.id())));
        }
    }

    let (capture_log, history) = ctx
        .store
        .open_log::<CaptureRecord>(Family::Runs, &ledger_key(&ctx.run_id))?;
    let (snapshot_log, snap_history) = ctx
        .store
        .open_log::<DocumentSnapshot>(Family::Runs, &snapshots_key(&ctx.run_id))?;

    let done: HashSet<(Intent, String, String)> = history
        .iter()
        .map(|e| (e.record.intent, e.record.query.clone(), e.record.engine_id.clone()))
        .collect();
    let slots: Mutex<HashMap<String, SnapshotSlot>> = Mutex::new(
        snap_history
            .iter()
            .map(|e| {
                (
                    e.record.normalized_url.clone(),
                    Arc::new(Mutex::new(Some(e.record.clone()))),
                )
            })
            .collect(),
    );

    let mut work = Vec::new();
    for q in sample {
        let Some(depth) = opts.depth_policy.depth(q.intent).filter(|_| q.intent.is_studied()) else {
            continue;
        };
        for (ei, e) in engines.iter().enumerate() {
            if !done.contains(&(q.intent, q.text.clone(), e.id().to_string())) {
                work.push((q, ei, depth));
            }
        }
    }
    if !done.is_empty() {
        tracing::info!(run = %ctx.run_id, already = done.len(), remaining = work.len(), "resuming collection");
    }

    let stop = AtomicBool::new(false);
    let appender = Appender {
        captures: &capture_log,
        snapshots: &snapshot_log,
        count: AtomicUsize::new(0),
        plan: opts.interrupt_after,
        stop: &stop,
    };
    let next = AtomicUsize::new(0);
    let first_error: Mutex<Option<CollectError>> = Mutex::new(None);
    let workers = opts.concurrency.clamp(1, work.len().max(1));

    let ensure_snapshot = |url: &str| -> Result<(), CollectError> {
        let slot = slots
            .lock()
            .unwrap()
            .entry(url.to_string())
            .or_insert_with(|| Arc::new(Mutex::new(None)))
            .clone();
        let mut slot = slot.lock().unwrap();
        if slot.is_some() {
            return Ok(());
        }
        let outcome = fetcher.fetch(url);
        let (snapshot_id, content_type) = if outcome.status == FetchStatus::Ok {
            let ctype = outcome
                .content_type
                .unwrap_or_else(|| "application/octet-stream".into());
            (Some(ctx.store.put_blob(&outcome.body, &ctype)?), Some(ctype))
        } else {
            (None, None)
        };
        let snap = DocumentSnapshot {
            normalized_url: url.to_string(),
            fetch_status: outcome.status,
            snapshot_id,
            content_type,
            fetched_at: ctx.clock.now(),
        };
        appender.snapshot(&snap)?;
        *slot = Some(snap);
        Ok(())
    };

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(query, ei, depth)) = work.get(i) else {
                    break;
                };
                let engine = &engines[ei];
                let attempted_at = ctx.clock.now();
                let outcome = match collect_serp(engine, &query.text, depth, &ctx.tracking, ctx.clock) {
                    Ok(capture) => {
                        let mut failed = None;
                        for r in &capture.results {
                            if let Some(url) = &r.normalized_url {
                                if let Err(e) = ensure_snapshot(url) {
                                    failed = Some(e);
                                    break;
                                }
                            }
                        }
                        if let Some(e) = failed {
                            first_error.lock().unwrap().get_or_insert(e);
                            stop.store(true, Ordering::SeqCst);
                            break;
                        }
                        CaptureOutcome::Succeeded {
                            results: capture.results,
                            note: capture.note,
                        }
                    }
                    Err(CollectError::Store(e)) => {
                        first_error.lock().unwrap().get_or_insert(e.into());
                        stop.store(true, Ordering::SeqCst);
                        break;
                    }
                    Err(e) => {
                        tracing::warn!(engine = engine.id(), query = %query.text, error = %e, "capture failed");
                        CaptureOutcome::Failed { reason: e.to_string() }
                    }
                };
                let record = CaptureRecord {
                    query: query.text.clone(),
                    intent: query.intent,
                    engine_id: engine.id().to_string(),
                    depth,
                    attempted_at,
                    outcome,
                };
                if let Err(e) = appender.capture(&record) {
                    first_error.lock().unwrap().get_or_insert(e.into());
                    stop.store(true, Ordering::SeqCst);
                    break;
                }
            });
        }
    });

    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    drop(capture_log);
    drop(snapshot_log);

    let (_, captures) = ctx
        .store
        .open_log::<CaptureRecord>(Family::Runs, &ledger_key(&ctx.run_id))?;
    let (_, snapshots) = ctx
        .store
        .open_log::<DocumentSnapshot>(Family::Runs, &snapshots_key(&ctx.run_id))?;
    let summaries: Vec<EngineSummary> = engines
        .iter()
        .map(|e| EngineSummary {
            engine_id: e.config.engine_id.clone(),
            display_name: e.config.display_name.clone(),
        })
        .collect();
    let run = materialize_run(
        &ctx.run_id,
        &ctx.sample_ref,
        sample,
        &summaries,
        &opts.depth_policy,
        captures.into_iter().map(|e| e.record).collect(),
        snapshots.into_iter().map(|e| e.record).collect(),
        opts.failure_threshold,
    );
    ctx.store.put_json(Family::Runs, &run_key(&ctx.run_id), &run)?;
    tracing::info!(
        run = %run.run_id,
        attempted = run.ledger.attempted,
        failed = run.ledger.failed,
        status = ?run.status,
        "collection finished"
    );
    Ok(run)
}

/// Canonical run from raw ledger contents: captures ordered by sample
/// position then engine order, snapshots by URL, first record wins on any
/// duplicate.
#[allow(clippy::too_many_arguments)]
pub fn materialize_run(
    run_id: &str,
    sample_ref: &str,
    sample: &[SampledQuery],
    engines: &[EngineSummary],
    depth_policy: &DepthPolicy,
    captures: Vec<CaptureRecord>,
    snapshots: Vec<DocumentSnapshot>,
    failure_threshold: f64,
) -> CollectionRun {
    let sample_pos: HashMap<(Intent, &str), usize> = sample
        .iter()
        .enumerate()
        .map(|(i, q)| ((q.intent, q.text.as_str()), i))
        .collect();
    let engine_pos: HashMap<&str, usize> = engines
        .iter()
        .enumerate()
        .map(|(i, e)| (e.engine_id.as_str(), i))
        .collect();

    let mut seen = HashSet::new();
    let mut captures: Vec<CaptureRecord> = captures
        .into_iter()
        .filter(|c| seen.insert((c.intent, c.query.clone(), c.engine_id.clone())))
        .collect();
    captures.sort_by_key(|c| {
        (
            sample_pos.get(&(c.intent, c.query.as_str())).copied().unwrap_or(usize::MAX),
            engine_pos.get(c.engine_id.as_str()).copied().unwrap_or(usize::MAX),
        )
    });

    let mut by_url: BTreeMap<String, DocumentSnapshot> = BTreeMap::new();
    for s in snapshots {
        by_url.entry(s.normalized_url.clone()).or_insert(s);
    }
    let snapshots: Vec<DocumentSnapshot> = by_url.into_values().collect();

    let mut ledger = RunLedger {
        attempted: captures.len(),
        ..RunLedger::default()
    };
    for c in &captures {
        match &c.outcome {
            CaptureOutcome::Succeeded { results, note } => {
                ledger.succeeded += 1;
                if note.is_some() {
                    ledger.short_captures += 1;
                }
                ledger.unresolvable_urls += results
                    .iter()
                    .filter(|r| matches!(r.resolution, Resolution::Unresolvable { .. }))
                    .count();
            }
            CaptureOutcome::Failed { .. } => ledger.failed += 1,
        }
    }
    for s in &snapshots {
        let tag = match &s.fetch_status {
            FetchStatus::Ok => "ok".to_string(),
            FetchStatus::HttpError { code } => format!("http-error-{code}"),
            FetchStatus::Timeout => "timeout".into(),
            FetchStatus::NetworkError { .. } => "network-error".into(),
            FetchStatus::Unresolvable => "unresolvable".into(),
        };
        *ledger.snapshots_by_status.entry(tag).or_insert(0) += 1;
    }

    let expected: usize = sample
        .iter()
        .filter(|q| q.intent.is_studied() && depth_policy.depth(q.intent).is_some())
        .count()
        * engines.len();
    let status = if ledger.attempted < expected {
        RunStatus::Incomplete
    } else if ledger.attempted > 0
        && ledger.failed as f64 / ledger.attempted as f64 > failure_threshold
    {
        RunStatus::Degraded
    } else {
        RunStatus::Complete
    };

    CollectionRun {
        run_id: run_id.to_string(),
        sample: sample_ref.to_string(),
        engines: engines.to_vec(),
        depth_policy: depth_policy.clone(),
        captures,
        snapshots,
        ledger,
        status,
    }
}
