//! The judging service. All mutations go through one mutex and are appended
//! to the study logs before they are acknowledged; reopening replays the
//! logs into the same state.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use chrono::{DateTime, Utc};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::navigational::{build_nav_items, AutoVerdict, NavItem, NavItemView};
use super::pool::build_tasks;
use super::{
    Binary, Judgment, JudgmentTask, JurorSession, Lease, NavigationalVerdict, StudyError,
    TaskStatus, VoucherEvent,
};
use crate::clock::Clock;
use crate::collector::{CollectionRun, RunLedger};
use crate::store::{
    AppendLog, BlobMeta, ContentHash, Family, FsStore, RecordStore, RecordStoreExt, Validate,
};

pub fn hash_access_code(code: &str) -> String {
    hex::encode(Sha256::digest(code.trim().as_bytes()))
}

#[derive(Debug, Clone)]
pub struct StudySettings {
    pub seed: u64,
    pub access_code_hashes: HashSet<String>,
    pub lease: Duration,
    /// A voucher needs strictly more than this share of judgeable results
    /// graded.
    pub voucher_threshold: Ratio<u64>,
}

impl StudySettings {
    pub fn new(seed: u64, codes: &[String]) -> Self {
        Self {
            seed,
            access_code_hashes: codes.iter().map(|c| hash_access_code(c)).collect(),
            lease: Duration::from_secs(60 * 60),
            voucher_threshold: Ratio::new(9, 10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentInput {
    pub pooled_id: String,
    #[serde(default)]
    pub binary: Option<Binary>,
    #[serde(default)]
    pub graded: Option<u8>,
    #[serde(default)]
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentView {
    pub binary: Option<Binary>,
    pub graded: Option<u8>,
    pub skipped: bool,
}

/// One result as a juror sees it: an opaque id and the stored document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultView {
    pub pooled_id: String,
    /// Path of the stored document, absent when none could be fetched.
    pub document: Option<String>,
    pub judgment: Option<JudgmentView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskProgress {
    pub visited: usize,
    pub total: usize,
    pub judgeable: usize,
    pub graded: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub task_id: String,
    pub query: String,
    pub results: Vec<ResultView>,
    pub progress: TaskProgress,
    pub lease_expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub task_id: String,
    pub progress: TaskProgress,
    pub voucher_issued: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub seq: u64,
    pub completion: Completion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: String,
    pub status: TaskStatus,
    pub judgments: usize,
    pub holder: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunProgress {
    pub run_id: String,
    pub tasks: usize,
    pub open: usize,
    pub in_progress: usize,
    pub complete: usize,
    /// Tasks with nothing judgeable, complete from the start.
    pub empty: usize,
    pub sessions: usize,
    pub judgments: usize,
    pub skipped: usize,
    pub vouchers: usize,
    pub nav_items_pending: usize,
    pub verdicts: usize,
    pub collection: RunLedger,
    pub per_task: Vec<TaskRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingVoucher {
    pub seq: u64,
    pub session_id: String,
    pub task_id: String,
    pub contact: Option<String>,
    pub issued_at: DateTime<Utc>,
}

/// What the metrics need: the tasks, the judgments of the session that
/// completed each task, and the navigational verdicts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyOutcome {
    pub tasks: Vec<JudgmentTask>,
    pub judgments: BTreeMap<String, Vec<Judgment>>,
    pub verdicts: Vec<NavigationalVerdict>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
enum SessionEvent {
    Opened(JurorSession),
    Contact { session_id: String, address: String },
}

#[derive(Serialize, Deserialize)]
struct TaskSet {
    run_id: String,
    seed: u64,
    tasks: Vec<JudgmentTask>,
}

impl Validate for TaskSet {
    fn validate(&self) -> Result<(), String> {
        for t in &self.tasks {
            let mut order = t.presentation_order.clone();
            order.sort();
            let mut ids: Vec<String> = t.results.iter().map(|r| r.pooled_id.clone()).collect();
            ids.sort();
            if order != ids {
                return Err(format!("task {}: presentation order is not a permutation", t.task_id));
            }
        }
        Ok(())
    }
}

struct SessionState {
    session: JurorSession,
    leased: HashSet<String>,
    current: Option<String>,
}

#[derive(Default)]
struct State {
    sessions: HashMap<String, SessionState>,
    leases: HashMap<String, Lease>,
    effective: HashMap<(String, String), (u64, Judgment)>,
    per_task: HashMap<String, usize>,
    records: usize,
    completed: HashMap<String, VoucherEvent>,
    vouchers: Vec<(u64, VoucherEvent)>,
    verdicts: BTreeMap<(String, String), NavigationalVerdict>,
}

impl State {
    fn apply_session(&mut self, e: SessionEvent) {
        match e {
            SessionEvent::Opened(s) => {
                self.sessions.insert(
                    s.session_id.clone(),
                    SessionState {
                        session: s,
                        leased: HashSet::new(),
                        current: None,
                    },
                );
            }
            SessionEvent::Contact { session_id, address } => {
                if let Some(s) = self.sessions.get_mut(&session_id) {
                    s.session.contact = Some(address);
                }
            }
        }
    }

    fn apply_lease(&mut self, l: Lease) {
        if let Some(s) = self.sessions.get_mut(&l.session_id) {
            s.leased.insert(l.task_id.clone());
            s.current = Some(l.task_id.clone());
        }
        self.leases.insert(l.task_id.clone(), l);
    }

    fn apply_judgment(&mut self, seq: u64, j: Judgment) {
        *self.per_task.entry(j.task_id.clone()).or_default() += 1;
        self.records += 1;
        self.effective
            .insert((j.session_id.clone(), j.pooled_id.clone()), (seq, j));
    }

    fn apply_voucher(&mut self, seq: u64, v: VoucherEvent) {
        self.completed.insert(v.task_id.clone(), v.clone());
        self.vouchers.push((seq, v));
    }

    fn apply_verdict(&mut self, v: NavigationalVerdict) {
        self.verdicts
            .insert((v.query.clone(), v.engine_id.clone()), v);
    }
}

struct Logs {
    sessions: AppendLog<SessionEvent>,
    leases: AppendLog<Lease>,
    judgments: AppendLog<Judgment>,
    vouchers: AppendLog<VoucherEvent>,
    verdicts: AppendLog<NavigationalVerdict>,
}

pub struct StudyService {
    run: CollectionRun,
    store: FsStore,
    settings: StudySettings,
    clock: Arc<dyn Clock>,
    tasks: Vec<JudgmentTask>,
    task_index: HashMap<String, usize>,
    result_task: HashMap<String, usize>,
    nav_items: Vec<NavItem>,
    documents: HashSet<String>,
    logs: Logs,
    state: Mutex<State>,
}

impl std::fmt::Debug for StudyService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StudyService")
            .field("run_id", &self.run.run_id)
            .field("tasks", &self.tasks.len())
            .finish()
    }
}

fn key(run_id: &str, name: &str) -> String {
    format!("{run_id}/{name}")
}

impl StudyService {
    /// Build tasks for `run` (or check them against the stored set) and
    /// replay the study logs.
    pub fn open(
        store: &FsStore,
        run: CollectionRun,
        settings: StudySettings,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, StudyError> {
        let run_id = run.run_id.clone();
        let tasks = build_tasks(&run, settings.seed);
        let set = TaskSet {
            run_id: run_id.clone(),
            seed: settings.seed,
            tasks,
        };
        let tasks_key = key(&run_id, "tasks.json");
        match store.get_json::<TaskSet>(Family::Study, &tasks_key)? {
            Some(stored) if stored.seed != set.seed || stored.tasks != set.tasks => {
                return Err(StudyError::Invalid(format!(
                    "stored tasks for run {run_id} do not match this run and seed"
                )));
            }
            Some(_) => {}
            None => store.put_json(Family::Study, &tasks_key, &set)?,
        }
        let tasks = set.tasks;

        let (nav_items, auto) = build_nav_items(&run, settings.seed);
        let mut documents = HashSet::new();
        for t in &tasks {
            documents.extend(t.results.iter().filter_map(|r| r.snapshot_id.as_ref()).map(|h| h.0.clone()));
        }
        documents.extend(nav_items.iter().filter_map(|n| n.snapshot_id.as_ref()).map(|h| h.0.clone()));

        let mut state = State::default();
        let (sessions, entries) = store.open_log(Family::Study, &key(&run_id, "sessions.jsonl"))?;
        entries.into_iter().for_each(|e| state.apply_session(e.record));
        let (leases, entries) = store.open_log(Family::Study, &key(&run_id, "leases.jsonl"))?;
        entries.into_iter().for_each(|e| state.apply_lease(e.record));
        let (judgments, entries) = store.open_log(Family::Study, &key(&run_id, "judgments.jsonl"))?;
        entries.into_iter().for_each(|e| state.apply_judgment(e.seq, e.record));
        let (vouchers, entries) = store.open_log(Family::Study, &key(&run_id, "vouchers.jsonl"))?;
        entries.into_iter().for_each(|e| state.apply_voucher(e.seq, e.record));
        let (verdicts, entries) = store.open_log(Family::Study, &key(&run_id, "verdicts.jsonl"))?;
        entries.into_iter().for_each(|e| state.apply_verdict(e.record));

        let task_index = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (t.task_id.clone(), i))
            .collect();
        let result_task = tasks
            .iter()
            .enumerate()
            .flat_map(|(i, t)| t.results.iter().map(move |r| (r.pooled_id.clone(), i)))
            .collect();

        let svc = Self {
            run,
            store: store.clone(),
            settings,
            clock,
            tasks,
            task_index,
            result_task,
            nav_items,
            documents,
            logs: Logs {
                sessions,
                leases,
                judgments,
                vouchers,
                verdicts,
            },
            state: Mutex::new(state),
        };
        svc.record_auto_verdicts(auto)?;
        Ok(svc)
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn run(&self) -> &CollectionRun {
        &self.run
    }

    pub fn tasks(&self) -> &[JudgmentTask] {
        &self.tasks
    }

    fn record_auto_verdicts(&self, auto: Vec<AutoVerdict>) -> Result<(), StudyError> {
        let mut st = self.lock();
        for a in auto {
            if st.verdicts.contains_key(&(a.query.clone(), a.engine_id.clone())) {
                continue;
            }
            let v = NavigationalVerdict {
                query: a.query,
                engine_id: a.engine_id,
                correct: false,
                assessor: "system".into(),
                reason: Some(a.reason.into()),
                recorded_at: self.clock.now(),
            };
            self.logs.verdicts.append(&v)?;
            st.apply_verdict(v);
        }
        Ok(())
    }

    pub fn open_session(&self, access_code: &str) -> Result<JurorSession, StudyError> {
        let hash = hash_access_code(access_code);
        if !self.settings.access_code_hashes.contains(&hash) {
            return Err(StudyError::InvalidCode);
        }
        let session = JurorSession {
            session_id: uuid::Uuid::new_v4().to_string(),
            access_code_hash: hash,
            started_at: self.clock.now(),
            contact: None,
        };
        let mut st = self.lock();
        let event = SessionEvent::Opened(session.clone());
        self.logs.sessions.append(&event)?;
        st.apply_session(event);
        Ok(session)
    }

    pub fn attach_contact(&self, session_id: &str, address: &str) -> Result<(), StudyError> {
        let address = address.trim();
        if address.is_empty() || !address.contains('@') {
            return Err(StudyError::Invalid("contact must be an e-mail address".into()));
        }
        let mut st = self.lock();
        if !st.sessions.contains_key(session_id) {
            return Err(StudyError::UnknownSession);
        }
        let event = SessionEvent::Contact {
            session_id: session_id.to_string(),
            address: address.to_string(),
        };
        self.logs.sessions.append(&event)?;
        st.apply_session(event);
        Ok(())
    }

    fn grant(&self, st: &mut State, task_id: &str, session_id: &str) -> Result<Lease, StudyError> {
        let lease = Lease {
            task_id: task_id.to_string(),
            session_id: session_id.to_string(),
            expires_at: self.clock.now() + chrono::Duration::from_std(self.settings.lease).unwrap_or(chrono::Duration::MAX),
        };
        self.logs.leases.append(&lease)?;
        st.apply_lease(lease.clone());
        Ok(lease)
    }

    fn is_complete(&self, st: &State, idx: usize) -> bool {
        self.tasks[idx].auto_complete() || st.completed.contains_key(&self.tasks[idx].task_id)
    }

    /// The session's current task, or a newly leased one: the least-judged
    /// open task this session has not held before. `None` when nothing is
    /// left.
    pub fn next_task(&self, session_id: &str) -> Result<Option<TaskPayload>, StudyError> {
        let mut st = self.lock();
        let now = self.clock.now();
        let session = st.sessions.get(session_id).ok_or(StudyError::UnknownSession)?;
        if let Some(current) = session.current.clone() {
            let idx = self.task_index[&current];
            let lease = st.leases[&current].clone();
            if !self.is_complete(&st, idx) && lease.session_id == session_id {
                let lease = if lease.expires_at <= now {
                    self.grant(&mut st, &current, session_id)?
                } else {
                    lease
                };
                return Ok(Some(self.payload(&st, idx, session_id, lease.expires_at)));
            }
        }
        let leased = &st.sessions[session_id].leased;
        let pick = self
            .tasks
            .iter()
            .enumerate()
            .filter(|(i, t)| {
                !self.is_complete(&st, *i)
                    && !leased.contains(&t.task_id)
                    && st.leases.get(&t.task_id).is_none_or(|l| l.expires_at <= now)
            })
            .min_by_key(|(i, t)| (st.per_task.get(&t.task_id).copied().unwrap_or(0), *i))
            .map(|(i, _)| i);
        match pick {
            None => {
                if let Some(s) = st.sessions.get_mut(session_id) {
                    s.current = None;
                }
                Ok(None)
            }
            Some(idx) => {
                let task_id = self.tasks[idx].task_id.clone();
                let lease = self.grant(&mut st, &task_id, session_id)?;
                Ok(Some(self.payload(&st, idx, session_id, lease.expires_at)))
            }
        }
    }

    fn progress_of(&self, st: &State, idx: usize, session_id: &str) -> TaskProgress {
        let task = &self.tasks[idx];
        let mut visited = 0;
        let mut graded = 0;
        for r in &task.results {
            if let Some((_, j)) = st.effective.get(&(session_id.to_string(), r.pooled_id.clone())) {
                visited += 1;
                if r.judgeable && j.graded.is_some() {
                    graded += 1;
                }
            }
        }
        TaskProgress {
            visited,
            total: task.results.len(),
            judgeable: task.judgeable_count(),
            graded,
            complete: self.is_complete(st, idx),
        }
    }

    fn payload(&self, st: &State, idx: usize, session_id: &str, expires: DateTime<Utc>) -> TaskPayload {
        let task = &self.tasks[idx];
        let results = task
            .presentation_order
            .iter()
            .map(|id| {
                let r = task.result(id).expect("presentation order is a permutation");
                ResultView {
                    pooled_id: id.clone(),
                    document: r
                        .judgeable
                        .then(|| r.snapshot_id.as_ref().map(|h| format!("/snapshots/{h}")))
                        .flatten(),
                    judgment: st
                        .effective
                        .get(&(session_id.to_string(), id.clone()))
                        .map(|(_, j)| JudgmentView {
                            binary: j.binary,
                            graded: j.graded,
                            skipped: j.skipped,
                        }),
                }
            })
            .collect();
        TaskPayload {
            task_id: task.task_id.clone(),
            query: task.query.clone(),
            results,
            progress: self.progress_of(st, idx, session_id),
            lease_expires_at: expires,
        }
    }

    fn earns_voucher(&self, p: &TaskProgress) -> bool {
        let t = self.settings.voucher_threshold;
        p.visited == p.total
            && p.judgeable > 0
            && (p.graded as u64) * t.denom() > (p.judgeable as u64) * t.numer()
    }

    pub fn record_judgment(&self, session_id: &str, input: JudgmentInput) -> Result<Ack, StudyError> {
        Judgment::check(input.binary, input.graded, input.skipped)?;
        let mut st = self.lock();
        let session = st.sessions.get(session_id).ok_or(StudyError::UnknownSession)?;
        let idx = *self
            .result_task
            .get(&input.pooled_id)
            .ok_or_else(|| StudyError::ForeignResult(input.pooled_id.clone()))?;
        let task_id = self.tasks[idx].task_id.clone();
        if session.current.as_deref() != Some(task_id.as_str()) {
            return Err(StudyError::ForeignResult(input.pooled_id));
        }
        if self.is_complete(&st, idx) {
            return Err(StudyError::TaskComplete(task_id));
        }
        if st.leases[&task_id].session_id != session_id {
            return Err(StudyError::LeaseLost);
        }
        let result = self.tasks[idx].result(&input.pooled_id).expect("indexed");
        if !result.judgeable && !input.skipped {
            return Err(StudyError::InvalidJudgment(
                "no document is available for this result; skip it".into(),
            ));
        }
        // Activity keeps the lease alive.
        self.grant(&mut st, &task_id, session_id)?;

        let supersedes = st
            .effective
            .get(&(session_id.to_string(), input.pooled_id.clone()))
            .map(|(seq, _)| *seq);
        let judgment = Judgment {
            session_id: session_id.to_string(),
            task_id: task_id.clone(),
            pooled_id: input.pooled_id,
            binary: input.binary,
            graded: input.graded,
            skipped: input.skipped,
            recorded_at: self.clock.now(),
            supersedes,
        };
        let seq = self.logs.judgments.append(&judgment)?;
        st.apply_judgment(seq, judgment);

        let mut progress = self.progress_of(&st, idx, session_id);
        let mut voucher_issued = false;
        if self.earns_voucher(&progress) {
            let v = VoucherEvent {
                session_id: session_id.to_string(),
                task_id: task_id.clone(),
                issued_at: self.clock.now(),
            };
            let vseq = self.logs.vouchers.append(&v)?;
            st.apply_voucher(vseq, v);
            progress.complete = true;
            voucher_issued = true;
        }
        Ok(Ack {
            seq,
            completion: Completion {
                task_id,
                progress,
                voucher_issued,
            },
        })
    }

    /// Stored document bytes, limited to documents this study references.
    pub fn document(&self, hash: &str) -> Result<Option<(Vec<u8>, BlobMeta)>, StudyError> {
        if !self.documents.contains(hash) {
            return Ok(None);
        }
        let Some(h) = ContentHash::parse(hash) else {
            return Ok(None);
        };
        Ok(self.store.get_blob(&h)?)
    }

    pub fn progress(&self) -> RunProgress {
        let st = self.lock();
        let now = self.clock.now();
        let mut per_task = Vec::new();
        let (mut open, mut in_progress, mut complete, mut empty) = (0, 0, 0, 0);
        for (i, t) in self.tasks.iter().enumerate() {
            let holder = st
                .leases
                .get(&t.task_id)
                .filter(|l| l.expires_at > now)
                .map(|l| l.session_id.clone());
            let status = if self.is_complete(&st, i) {
                complete += 1;
                if t.auto_complete() {
                    empty += 1;
                }
                TaskStatus::Complete
            } else if holder.is_some() {
                in_progress += 1;
                TaskStatus::InProgress
            } else {
                open += 1;
                TaskStatus::Open
            };
            per_task.push(TaskRow {
                task_id: t.task_id.clone(),
                status,
                judgments: st.per_task.get(&t.task_id).copied().unwrap_or(0),
                holder: if status == TaskStatus::Complete { None } else { holder },
            });
        }
        RunProgress {
            run_id: self.run.run_id.clone(),
            tasks: self.tasks.len(),
            open,
            in_progress,
            complete,
            empty,
            sessions: st.sessions.len(),
            judgments: st.records,
            skipped: st.effective.values().filter(|(_, j)| j.skipped).count(),
            vouchers: st.vouchers.len(),
            nav_items_pending: self.pending_items(&st).len(),
            verdicts: st.verdicts.len(),
            collection: self.run.ledger.clone(),
            per_task,
        }
    }

    /// Vouchers issued after sequence number `after`, with the contact
    /// address where the juror left one.
    pub fn pending_vouchers(&self, after: Option<u64>) -> Vec<PendingVoucher> {
        let st = self.lock();
        st.vouchers
            .iter()
            .filter(|(seq, _)| after.is_none_or(|a| *seq > a))
            .map(|(seq, v)| PendingVoucher {
                seq: *seq,
                session_id: v.session_id.clone(),
                task_id: v.task_id.clone(),
                contact: st.sessions.get(&v.session_id).and_then(|s| s.session.contact.clone()),
                issued_at: v.issued_at,
            })
            .collect()
    }

    fn pending_items(&self, st: &State) -> Vec<NavItemView> {
        self.nav_items
            .iter()
            .filter(|n| {
                n.targets
                    .iter()
                    .any(|e| !st.verdicts.contains_key(&(n.query.clone(), e.clone())))
            })
            .map(NavItem::view)
            .collect()
    }

    /// Navigational items still awaiting a verdict, without engine identity.
    pub fn nav_items(&self) -> Vec<NavItemView> {
        self.pending_items(&self.lock())
    }

    pub fn record_verdict(
        &self,
        query: &str,
        engine_id: &str,
        correct: bool,
        assessor: &str,
    ) -> Result<NavigationalVerdict, StudyError> {
        let mut st = self.lock();
        self.record_verdict_locked(&mut st, query, engine_id, correct, assessor)
    }

    fn record_verdict_locked(
        &self,
        st: &mut State,
        query: &str,
        engine_id: &str,
        correct: bool,
        assessor: &str,
    ) -> Result<NavigationalVerdict, StudyError> {
        if assessor.trim().is_empty() {
            return Err(StudyError::Invalid("assessor must be named".into()));
        }
        let known = self.nav_items.iter().any(|n| {
            n.query == query && n.targets.iter().any(|t| t == engine_id)
        });
        if !known {
            return Err(StudyError::Invalid(format!(
                "no navigational result for {query:?} on {engine_id}"
            )));
        }
        if st.verdicts.contains_key(&(query.to_string(), engine_id.to_string())) {
            return Err(StudyError::DuplicateVerdict {
                query: query.to_string(),
                engine: engine_id.to_string(),
            });
        }
        let v = NavigationalVerdict {
            query: query.to_string(),
            engine_id: engine_id.to_string(),
            correct,
            assessor: assessor.to_string(),
            reason: None,
            recorded_at: self.clock.now(),
        };
        self.logs.verdicts.append(&v)?;
        st.apply_verdict(v.clone());
        Ok(v)
    }

    /// Verdict on an anonymized item; applies to every engine whose first
    /// result was this URL.
    pub fn record_item_verdict(
        &self,
        item_id: &str,
        correct: bool,
        assessor: &str,
    ) -> Result<usize, StudyError> {
        let item = self
            .nav_items
            .iter()
            .find(|n| n.item_id == item_id)
            .ok_or_else(|| StudyError::UnknownItem(item_id.to_string()))?;
        let mut st = self.lock();
        if let Some(e) = item
            .targets
            .iter()
            .find(|e| st.verdicts.contains_key(&(item.query.clone(), (*e).clone())))
        {
            return Err(StudyError::DuplicateVerdict {
                query: item.query.clone(),
                engine: e.clone(),
            });
        }
        for e in &item.targets {
            self.record_verdict_locked(&mut st, &item.query, e, correct, assessor)?;
        }
        Ok(item.targets.len())
    }

    pub fn outcome(&self) -> StudyOutcome {
        let st = self.lock();
        let mut judgments: BTreeMap<String, Vec<Judgment>> = BTreeMap::new();
        for t in &self.tasks {
            let Some(v) = st.completed.get(&t.task_id) else {
                continue;
            };
            let js = t
                .results
                .iter()
                .filter_map(|r| st.effective.get(&(v.session_id.clone(), r.pooled_id.clone())))
                .map(|(_, j)| j.clone())
                .collect();
            judgments.insert(t.task_id.clone(), js);
        }
        StudyOutcome {
            tasks: self.tasks.clone(),
            judgments,
            verdicts: st.verdicts.values().cloned().collect(),
        }
    }
}
