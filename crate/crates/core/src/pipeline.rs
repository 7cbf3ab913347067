//! The study pipeline as library calls: sample, collect, open the judging
//! service, report, validate. The CLI is a thin shell over these.

use std::collections::BTreeMap;
use std::io::BufReader;
use std::sync::Arc;

use chrono::Utc;
use serde::Serialize;

use crate::clock::{Clock, FixedClock, SystemClock};
use crate::collector::{
    build_engines, load_run, run_collection, CollectError, CollectionOptions, CollectionRun,
    Interrupt, ReplayFixture, RunContext, AdapterConfig,
};
use crate::config::{ConfigError, StudyConfig};
use crate::metrics::{build_report, render_exports, MetricsError, MetricsReport};
use crate::sampler::{
    apply_intent_labels, build_sample, draw_candidates, ingest_log, render_label_template,
    segment_by_popularity, LabelFile, LabeledCandidates, Sample, SampleError, SampledQuery,
    Shortfall,
};
use crate::seed::derive_seed;
use crate::store::{Family, FsStore, RecordStore, StoreError, StudyRecord, StudyStatus};
use crate::study::{StudyError, StudyService, StudySettings};

pub const SAMPLE_KEY: &str = "sample.tsv";
pub const CANDIDATES_KEY: &str = "candidates.tsv";
pub const TEMPLATE_KEY: &str = "label-template.tsv";
pub const SAMPLE_REPORT_KEY: &str = "sample-report.json";
pub const TABLE_KEY: &str = "frequency.tsv";

/// Failures split by who has to act: the study author (validation) or the
/// operator (runtime).
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{}", .0.join("\n"))]
    Validation(Vec<String>),
    #[error("{0}")]
    Runtime(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            PipelineError::Runtime(_) => 3,
        }
    }
}

fn validation(msg: impl Into<String>) -> PipelineError {
    PipelineError::Validation(vec![msg.into()])
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid(p) => PipelineError::Validation(p),
            e => validation(e.to_string()),
        }
    }
}

impl From<StoreError> for PipelineError {
    fn from(e: StoreError) -> Self {
        PipelineError::Runtime(e.to_string())
    }
}

impl From<SampleError> for PipelineError {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::Io(m) => PipelineError::Runtime(m),
            e => validation(e.to_string()),
        }
    }
}

impl From<CollectError> for PipelineError {
    fn from(e: CollectError) -> Self {
        match e {
            CollectError::Config(_) | CollectError::Fixture { .. } => validation(e.to_string()),
            e => PipelineError::Runtime(e.to_string()),
        }
    }
}

impl From<StudyError> for PipelineError {
    fn from(e: StudyError) -> Self {
        PipelineError::Runtime(e.to_string())
    }
}

impl From<MetricsError> for PipelineError {
    fn from(e: MetricsError) -> Self {
        PipelineError::Runtime(e.to_string())
    }
}

pub fn open_store(cfg: &StudyConfig) -> Result<FsStore, PipelineError> {
    let store = FsStore::open(cfg.store_dir())?;
    store.create_or_open_study(&StudyRecord {
        study_id: cfg.study_id.clone(),
        sample: None,
        runs: Vec::new(),
        seed: cfg.seed,
        created_at: Utc::now(),
        status: StudyStatus::Sampling,
    })?;
    Ok(store)
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleReport {
    pub log_instances: u64,
    pub log_distinct: usize,
    pub rejected_lines: usize,
    pub segments: Vec<SegmentSummary>,
    pub shortfalls: Vec<Shortfall>,
    pub excluded: BTreeMap<String, usize>,
    pub sampled: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentSummary {
    pub index: usize,
    pub distinct: usize,
    pub instances: u64,
    pub candidates: usize,
}

/// Ingest the log, segment it, draw candidates and apply the human labels.
/// With labels missing in strict mode, a labeling template is written to
/// the store and the command fails with the gap list.
pub fn cmd_sample(cfg: &StudyConfig, store: &FsStore) -> Result<(Sample, SampleReport), PipelineError> {
    let log_path = cfg.resolve(&cfg.paths.log);
    let file = std::fs::File::open(&log_path)
        .map_err(|e| validation(format!("{}: {e}", log_path.display())))?;
    let ingest = ingest_log(BufReader::new(file), cfg.paths.log_format)?;
    if !ingest.rejects.is_empty() {
        tracing::warn!(rejected = ingest.rejects.len(), "log lines rejected");
    }
    store.put_text(Family::Tables, TABLE_KEY, &ingest.table.to_tsv())?;

    let segments = segment_by_popularity(&ingest.table, cfg.sampling.segments)?;
    let candidates: Vec<(usize, Vec<String>)> = segments
        .iter()
        .map(|s| {
            let seed = derive_seed(cfg.seed, "candidates", s.index as u64);
            (s.index, draw_candidates(s, cfg.sampling.candidates_per_segment, seed))
        })
        .collect();
    let mut listing = String::new();
    for (seg, qs) in &candidates {
        for q in qs {
            listing.push_str(&format!("{q}\t{seg}\n"));
        }
    }
    store.put_text(Family::Samples, CANDIDATES_KEY, &listing)?;

    let labels_path = cfg.resolve(&cfg.paths.labels);
    let labels = match std::fs::read_to_string(&labels_path) {
        Ok(text) => LabelFile::parse(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => LabelFile::default(),
        Err(e) => return Err(PipelineError::Runtime(format!("{}: {e}", labels_path.display()))),
    };
    let mut labeled: Vec<LabeledCandidates> = Vec::new();
    let mut missing = Vec::new();
    for (seg, qs) in &candidates {
        match apply_intent_labels(*seg, qs, &labels, cfg.sampling.label_mode) {
            Ok(l) => labeled.push(l),
            Err(SampleError::MissingLabels { missing: m }) => missing.extend(m),
            Err(e) => return Err(e.into()),
        }
    }
    if !missing.is_empty() {
        let gaps: Vec<(usize, Vec<String>)> = candidates
            .iter()
            .map(|(seg, qs)| (*seg, qs.iter().filter(|q| labels.get(q).is_none()).cloned().collect()))
            .collect();
        store.put_text(Family::Samples, TEMPLATE_KEY, &render_label_template(&gaps))?;
        let template = store.path(Family::Samples, TEMPLATE_KEY)?;
        let mut problems = vec![format!(
            "{} candidate(s) lack an intent label; template written to {}",
            missing.len(),
            template.display()
        )];
        problems.extend(missing.iter().take(20).map(|q| format!("  unlabeled: {q}")));
        return Err(PipelineError::Validation(problems));
    }

    let sample = build_sample(&labeled, &cfg.sampling.targets, cfg.seed);
    for s in &sample.shortfalls {
        tracing::warn!(
            segment = s.segment_index,
            intent = %s.intent,
            available = s.available,
            target = s.target,
            "segment short of target"
        );
    }
    let mut sampled = BTreeMap::new();
    for q in &sample.queries {
        *sampled.entry(q.intent.to_string()).or_insert(0) += 1;
    }
    let report = SampleReport {
        log_instances: ingest.table.total_instances(),
        log_distinct: ingest.table.distinct(),
        rejected_lines: ingest.rejects.len(),
        segments: segments
            .iter()
            .zip(&candidates)
            .map(|(s, (_, c))| SegmentSummary {
                index: s.index,
                distinct: s.distinct_count(),
                instances: s.instance_count,
                candidates: c.len(),
            })
            .collect(),
        shortfalls: sample.shortfalls.clone(),
        excluded: sample.excluded.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        sampled,
    };
    store.put_text(Family::Samples, SAMPLE_KEY, &sample.to_tsv())?;
    let mut json = serde_json::to_vec_pretty(&report).map_err(StoreError::from)?;
    json.push(b'\n');
    store.put_bytes(Family::Samples, SAMPLE_REPORT_KEY, &json)?;
    store.update_study(|r| {
        r.sample = Some(SAMPLE_KEY.into());
        if r.status == StudyStatus::Sampling {
            r.status = StudyStatus::Collecting;
        }
    })?;
    Ok((sample, report))
}

pub fn load_sample(store: &FsStore) -> Result<Vec<SampledQuery>, PipelineError> {
    let text = store
        .get_text(Family::Samples, SAMPLE_KEY)?
        .ok_or_else(|| validation("no sample in the store; run `sample` first"))?;
    Ok(Sample::from_tsv(&text)?)
}

fn collection_clock(cfg: &StudyConfig) -> Box<dyn Clock> {
    match cfg.collection.fixed_time {
        Some(t) => Box::new(FixedClock(t)),
        None => Box::new(SystemClock),
    }
}

/// Collect (or resume) the configured run.
pub fn cmd_collect(
    cfg: &StudyConfig,
    store: &FsStore,
    interrupt_after: Option<(usize, Interrupt)>,
) -> Result<CollectionRun, PipelineError> {
    let sample = load_sample(store)?;
    let (engines, fetcher) = build_engines(&cfg.engines, &cfg.fixtures_dir(), &cfg.fetch_policy())?;
    let clock = collection_clock(cfg);
    let ctx = RunContext {
        store,
        run_id: cfg.collection.run_id.clone(),
        sample_ref: SAMPLE_KEY.into(),
        clock: clock.as_ref(),
        tracking: cfg.collection.tracking.clone(),
    };
    let opts = CollectionOptions {
        depth_policy: cfg.collection.depth.clone(),
        concurrency: cfg.collection.concurrency,
        failure_threshold: cfg.collection.failure_threshold,
        interrupt_after,
    };
    let run = run_collection(&ctx, &sample, &engines, fetcher.as_ref(), &opts)?;
    store.update_study(|r| {
        if !r.runs.contains(&run.run_id) {
            r.runs.push(run.run_id.clone());
        }
        if matches!(r.status, StudyStatus::Sampling | StudyStatus::Collecting) {
            r.status = StudyStatus::Judging;
        }
    })?;
    Ok(run)
}

pub fn study_settings(cfg: &StudyConfig) -> StudySettings {
    let mut s = StudySettings::new(cfg.seed, &cfg.study.access_codes);
    s.lease = std::time::Duration::from_secs(cfg.study.lease_minutes * 60);
    s.voucher_threshold = cfg.voucher_threshold();
    s
}

pub fn open_study(
    cfg: &StudyConfig,
    store: &FsStore,
    clock: Arc<dyn Clock>,
) -> Result<StudyService, PipelineError> {
    let run = load_run(store, &cfg.collection.run_id).map_err(|e| match e {
        StoreError::NotFound(_) => validation(format!(
            "run {} has not been collected; run `collect` first",
            cfg.collection.run_id
        )),
        e => e.into(),
    })?;
    Ok(StudyService::open(store, run, study_settings(cfg), clock)?)
}

/// Compute the report and write its exports under `reports/<run_id>/`.
pub fn cmd_report(cfg: &StudyConfig, store: &FsStore) -> Result<MetricsReport, PipelineError> {
    let study = open_study(cfg, store, Arc::new(SystemClock))?;
    let report = build_report(study.run(), &study.outcome(), cfg.seed)?;
    for w in &report.warnings {
        tracing::warn!("{w}");
    }
    for (name, bytes) in render_exports(&report) {
        store.put_bytes(Family::Reports, &format!("{}/{name}", report.run_id), &bytes)?;
    }
    store.update_study(|r| r.status = StudyStatus::Reported)?;
    Ok(report)
}

/// Dry run over every input. Returns warnings; any error is fatal.
pub fn cmd_validate(cfg: &StudyConfig) -> Result<Vec<String>, PipelineError> {
    let mut problems = cfg.problems(true);
    let mut warnings = Vec::new();

    let log_path = cfg.resolve(&cfg.paths.log);
    if let Ok(file) = std::fs::File::open(&log_path) {
        match ingest_log(BufReader::new(file), cfg.paths.log_format) {
            Ok(r) => {
                if !r.rejects.is_empty() {
                    warnings.push(format!("{} log line(s) would be rejected", r.rejects.len()));
                }
                if r.table.distinct() < cfg.sampling.segments {
                    problems.push(format!(
                        "log has {} distinct queries, fewer than {} segments",
                        r.table.distinct(),
                        cfg.sampling.segments
                    ));
                }
            }
            Err(e) => problems.push(format!("{}: {e}", log_path.display())),
        }
    }
    let labels_path = cfg.resolve(&cfg.paths.labels);
    if let Ok(text) = std::fs::read_to_string(&labels_path) {
        if let Err(e) = LabelFile::parse(&text) {
            problems.push(format!("{}: {e}", labels_path.display()));
        }
    }
    for e in &cfg.engines {
        if let AdapterConfig::ReplayFixture { fixture } = &e.adapter {
            let path = cfg.fixtures_dir().join(fixture);
            if path.is_file() {
                if let Err(err) = ReplayFixture::load(&path) {
                    problems.push(err.to_string());
                }
            }
        }
    }
    let store_dir = cfg.store_dir();
    if store_dir.join("study.json").is_file() {
        let store = FsStore::open(&store_dir)?;
        if let Some(rec) = store.get_study()? {
            if rec.seed != cfg.seed {
                problems.push(format!(
                    "store was created with seed {}, config says {}",
                    rec.seed, cfg.seed
                ));
            }
            if rec.study_id != cfg.study_id {
                problems.push(format!("store belongs to study {:?}", rec.study_id));
            }
        }
    }
    if problems.is_empty() {
        Ok(warnings)
    } else {
        Err(PipelineError::Validation(problems))
    }
}
