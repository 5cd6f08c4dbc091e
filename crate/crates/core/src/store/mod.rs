//! Task, annotation and aggregate storage.
//!
//! Each record type lives in an append-only JSONL journal inside the data
//! directory (`tasks.jsonl`, `annotations.jsonl`, `aggregates.jsonl`). The
//! in-memory index is rebuilt by replaying the journals on open. Mutations go
//! through `&mut Store`; readers take a [`Snapshot`], which is immutable and
//! cheap to clone.

mod model;

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use thiserror::Error;

pub use model::{
    timestamp, Annotation, AnnotationSubmission, AnnotatorProfile, ComparisonTask, Criterion, CriterionLabels,
    PreferencePairRecord, ResponseOption, WEIGHT_SUM_EPS,
};

use crate::aggregation::{aggregate_criteria, AggregatedPreference, WeightVector};
use crate::canonical::to_canonical_line;
use crate::ifs::{IfsError, IfsValue, RawIfs};

pub const TASKS_FILE: &str = "tasks.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const AGGREGATES_FILE: &str = "aggregates.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("schema error: {reason}")]
    Schema { reason: String },
    #[error("duplicate task_id {0}")]
    DuplicateTaskId(String),
    #[error("duplicate annotation_id {0}")]
    DuplicateAnnotationId(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("label for {response}: {source}")]
    InvalidLabel { response: String, source: IfsError },
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("per-criterion labels inconsistent: {0}")]
    Criteria(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("{file} line {line}: {reason}")]
    Journal { file: String, line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl StoreError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Schema { .. } => "schema_error",
            StoreError::DuplicateTaskId(_) => "duplicate_task_id",
            StoreError::DuplicateAnnotationId(_) => "duplicate_annotation_id",
            StoreError::UnknownTask(_) => "unknown_task",
            StoreError::InvalidLabel { source: IfsError::ConstraintViolated { .. }, .. } => "constraint_violated",
            StoreError::InvalidLabel { .. } => "out_of_range",
            StoreError::Coverage(_) => "coverage_error",
            StoreError::Criteria(_) => "criteria_mismatch",
            StoreError::InvalidField(_) => "invalid_field",
            StoreError::Journal { .. } => "journal_error",
            StoreError::Io(_) => "io_error",
        }
    }

    /// Short human-readable reason without the error-kind prefix.
    pub fn reason(&self) -> String {
        match self {
            StoreError::Schema { reason } => reason.clone(),
            StoreError::InvalidLabel { source, .. } => source.reason(),
            StoreError::Coverage(r) | StoreError::Criteria(r) | StoreError::InvalidField(r) => r.clone(),
            other => other.to_string(),
        }
    }

    /// True for errors caused by the caller's input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, StoreError::Io(_) | StoreError::Journal { .. })
    }
}

/// Outcome of one line of a bulk import.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub code: &'static str,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportReport {
    pub count: usize,
    pub errors: Vec<LineError>,
}

impl ImportReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    Tasks,
    Annotations,
    Aggregates,
    Pairwise,
}

impl ExportKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExportKind::Tasks => "tasks",
            ExportKind::Annotations => "annotations",
            ExportKind::Aggregates => "aggregates",
            ExportKind::Pairwise => "pairwise",
        }
    }
}

impl FromStr for ExportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tasks" => Ok(ExportKind::Tasks),
            "annotations" => Ok(ExportKind::Annotations),
            "aggregates" => Ok(ExportKind::Aggregates),
            "pairwise" => Ok(ExportKind::Pairwise),
            other => Err(format!("unknown kind {other:?}; expected tasks, annotations, aggregates or pairwise")),
        }
    }
}

/// Borrowed view of tasks and their live annotations.
#[derive(Debug, Clone, Default)]
pub struct Dataset<'a> {
    pub tasks: Vec<&'a ComparisonTask>,
    pub annotations: Vec<&'a Annotation>,
}

impl<'a> Dataset<'a> {
    pub fn new<T, A>(tasks: &'a [T], annotations: &'a [A]) -> Self
    where
        T: Borrow<ComparisonTask>,
        A: Borrow<Annotation>,
    {
        Self {
            tasks: tasks.iter().map(Borrow::borrow).collect(),
            annotations: annotations.iter().map(Borrow::borrow).collect(),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct StoreState {
    tasks: Vec<Arc<ComparisonTask>>,
    task_index: HashMap<String, usize>,
    history: Vec<Arc<Annotation>>,
    annotation_ids: HashSet<String>,
    /// (task_id, annotator_id) -> index into `history`.
    live: HashMap<(String, String), usize>,
    aggregates: HashMap<String, Arc<AggregatedPreference>>,
}

/// Immutable point-in-time view of the store.
#[derive(Debug, Clone, Default)]
pub struct Snapshot(Arc<StoreState>);

impl Snapshot {
    /// Tasks in import order.
    pub fn tasks(&self) -> impl Iterator<Item = &ComparisonTask> {
        self.0.tasks.iter().map(|t| t.as_ref())
    }

    pub fn task(&self, task_id: &str) -> Option<&ComparisonTask> {
        self.0.task_index.get(task_id).map(|i| self.0.tasks[*i].as_ref())
    }

    pub fn task_count(&self) -> usize {
        self.0.tasks.len()
    }

    /// Every submission ever accepted, in submission order.
    pub fn history(&self) -> impl Iterator<Item = &Annotation> {
        self.0.history.iter().map(|a| a.as_ref())
    }

    /// One annotation per (task, annotator), in submission order.
    pub fn live_annotations(&self) -> Vec<&Annotation> {
        let mut idx: Vec<usize> = self.0.live.values().copied().collect();
        idx.sort_unstable();
        idx.into_iter().map(|i| self.0.history[i].as_ref()).collect()
    }

    pub fn live_annotation(&self, task_id: &str, annotator_id: &str) -> Option<&Annotation> {
        self.0
            .live
            .get(&(task_id.to_string(), annotator_id.to_string()))
            .map(|i| self.0.history[*i].as_ref())
    }

    pub fn annotation(&self, annotation_id: &str) -> Option<&Annotation> {
        self.history().find(|a| a.annotation_id == annotation_id)
    }

    /// Stored aggregates in task order.
    pub fn aggregates(&self) -> Vec<&AggregatedPreference> {
        self.tasks().filter_map(|t| self.0.aggregates.get(&t.task_id).map(|a| a.as_ref())).collect()
    }

    pub fn dataset(&self) -> Dataset<'_> {
        Dataset { tasks: self.tasks().collect(), annotations: self.live_annotations() }
    }

    pub fn is_empty(&self) -> bool {
        self.0.tasks.is_empty() && self.0.history.is_empty()
    }

    /// Lowest-ordinal task the annotator has no live annotation for.
    pub fn next_task_for(&self, annotator_id: &str) -> Option<&ComparisonTask> {
        self.tasks().find(|t| !self.0.live.contains_key(&(t.task_id.clone(), annotator_id.to_string())))
    }

    /// Canonical JSONL for one record kind.
    pub fn export(&self, kind: ExportKind) -> String {
        let mut out = String::new();
        let mut push = |line: serde_json::Result<String>| out.push_str(&line.expect("records serialize"));
        match kind {
            ExportKind::Tasks => self.tasks().for_each(|t| push(to_canonical_line(t))),
            ExportKind::Annotations => self.live_annotations().into_iter().for_each(|a| push(to_canonical_line(a))),
            ExportKind::Aggregates => self.aggregates().into_iter().for_each(|a| push(to_canonical_line(a))),
            ExportKind::Pairwise => export_preference_pairs(&self.aggregates())
                .iter()
                .for_each(|p| push(to_canonical_line(p))),
        }
        out
    }

    /// Re-checks every stored record against the store invariants.
    pub fn verify_integrity(&self) -> Result<(), String> {
        let mut live_count: HashMap<(&str, &str), usize> = HashMap::new();
        for a in self.history() {
            let task = self.task(&a.task_id).ok_or_else(|| format!("{} references missing task", a.annotation_id))?;
            check_annotation(task, a).map_err(|e| format!("{}: {e}", a.annotation_id))?;
        }
        for a in self.live_annotations() {
            *live_count.entry((&a.task_id, &a.annotator_id)).or_default() += 1;
        }
        if let Some(k) = live_count.iter().find(|(_, n)| **n != 1) {
            return Err(format!("{:?} has {} live annotations", k.0, k.1));
        }
        for agg in self.aggregates() {
            let task = self.task(&agg.task_id).ok_or("aggregate references missing task")?;
            if !agg.labels.keys().all(|r| task.has_response(r)) {
                return Err(format!("aggregate for {} references unknown responses", agg.task_id));
            }
        }
        Ok(())
    }
}

fn check_annotation(task: &ComparisonTask, a: &Annotation) -> Result<(), StoreError> {
    let expected: BTreeSet<&str> = task.response_ids().collect();
    let got: BTreeSet<&str> = a.labels.keys().map(String::as_str).collect();
    if expected != got {
        let missing: Vec<_> = expected.difference(&got).collect();
        let extra: Vec<_> = got.difference(&expected).collect();
        return Err(StoreError::Coverage(format!("labels missing {missing:?}, unexpected {extra:?}")));
    }
    if a.annotator_id.is_empty() {
        return Err(StoreError::InvalidField("annotator_id is empty".into()));
    }
    if let Some(per) = &a.per_criterion {
        let criteria = task
            .criteria
            .as_ref()
            .ok_or_else(|| StoreError::Criteria("task has no criteria".into()))?;
        let names: BTreeSet<&str> = criteria.iter().map(|c| c.name.as_str()).collect();
        let given: BTreeSet<&str> = per.keys().map(String::as_str).collect();
        if names != given {
            return Err(StoreError::Criteria(format!("expected criteria {names:?}, got {given:?}")));
        }
        for (name, labels) in per {
            let got: BTreeSet<&str> = labels.keys().map(String::as_str).collect();
            if got != expected {
                return Err(StoreError::Criteria(format!("criterion {name} does not cover the response set")));
            }
        }
        let ordered: Vec<BTreeMap<String, IfsValue>> = criteria.iter().map(|c| per[&c.name].clone()).collect();
        let weights = WeightVector::normalized(criteria.iter().map(|c| c.weight).collect())
            .map_err(|e| StoreError::Criteria(e.to_string()))?;
        let combined = aggregate_criteria(&ordered, &weights).map_err(|e| StoreError::Criteria(e.to_string()))?;
        for (rid, v) in &combined {
            if !v.approx_eq(&a.labels[rid], WEIGHT_SUM_EPS) {
                return Err(StoreError::Criteria(format!(
                    "labels[{rid}] = {} but weighted criteria give {v}",
                    a.labels[rid]
                )));
            }
        }
    }
    Ok(())
}

fn validate_raw(response: &str, raw: RawIfs) -> Result<IfsValue, StoreError> {
    IfsValue::try_from(raw).map_err(|source| StoreError::InvalidLabel { response: response.to_string(), source })
}

#[derive(Debug, Clone)]
struct Journal {
    dir: PathBuf,
}

impl Journal {
    fn append(&self, file: &str, line: &str) -> io::Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.dir.join(file))?;
        f.write_all(line.as_bytes())?;
        f.flush()
    }
}

/// The single writer over a data directory (or purely in memory).
#[derive(Debug, Default)]
pub struct Store {
    state: Arc<StoreState>,
    journal: Option<Journal>,
}

impl Store {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a data directory and replays its journals.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut store = Store::in_memory();
        replay(dir, TASKS_FILE, |line| {
            let task: ComparisonTask = serde_json::from_str(line).map_err(|e| e.to_string())?;
            store.import_task(task).map_err(|e| e.to_string())
        })?;
        replay(dir, ANNOTATIONS_FILE, |line| {
            let a: Annotation = serde_json::from_str(line).map_err(|e| e.to_string())?;
            store.record_annotation(a).map(|_| ()).map_err(|e| e.to_string())
        })?;
        replay(dir, AGGREGATES_FILE, |line| {
            let agg: AggregatedPreference = serde_json::from_str(line).map_err(|e| e.to_string())?;
            store.put_aggregates(vec![agg]).map_err(|e| e.to_string())
        })?;
        store.journal = Some(Journal { dir: dir.to_path_buf() });
        Ok(store)
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.journal.as_ref().map(|j| j.dir.as_path())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot(Arc::clone(&self.state))
    }

    /// In-memory copy of the current state; writes to it never reach disk.
    pub fn detached(&self) -> Store {
        Store { state: Arc::clone(&self.state), journal: None }
    }

    fn state_mut(&mut self) -> &mut StoreState {
        Arc::make_mut(&mut self.state)
    }

    fn log(&self, file: &str, line: &str) -> Result<(), StoreError> {
        if let Some(j) = &self.journal {
            j.append(file, line)?;
        }
        Ok(())
    }

    /// Adds one task. The first task with a given id wins.
    pub fn import_task(&mut self, task: ComparisonTask) -> Result<(), StoreError> {
        task.validate()?;
        if self.state.task_index.contains_key(&task.task_id) {
            return Err(StoreError::DuplicateTaskId(task.task_id));
        }
        self.log(TASKS_FILE, &to_canonical_line(&task).expect("task serializes"))?;
        let state = self.state_mut();
        state.task_index.insert(task.task_id.clone(), state.tasks.len());
        state.tasks.push(Arc::new(task));
        Ok(())
    }

    /// Imports line-delimited task records; each line succeeds or fails alone.
    pub fn import_tasks(&mut self, reader: impl Read) -> Result<ImportReport, StoreError> {
        self.import_lines(reader, |store, line| {
            let task: ComparisonTask =
                serde_json::from_str(line).map_err(|e| StoreError::Schema { reason: e.to_string() })?;
            store.import_task(task)
        })
    }

    /// Imports line-delimited annotation submissions.
    pub fn import_annotations(&mut self, reader: impl Read) -> Result<ImportReport, StoreError> {
        self.import_lines(reader, |store, line| {
            let sub: AnnotationSubmission =
                serde_json::from_str(line).map_err(|e| StoreError::Schema { reason: e.to_string() })?;
            store.record_submission(sub).map(|_| ())
        })
    }

    fn import_lines(
        &mut self,
        reader: impl Read,
        mut apply: impl FnMut(&mut Store, &str) -> Result<(), StoreError>,
    ) -> Result<ImportReport, StoreError> {
        let mut report = ImportReport::default();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match apply(self, &line) {
                Ok(()) => report.count += 1,
                Err(StoreError::Io(e)) => return Err(StoreError::Io(e)),
                Err(e) => report.errors.push(LineError { line: i + 1, code: e.code(), reason: e.reason() }),
            }
        }
        Ok(report)
    }

    /// Validates a raw client submission and records it.
    ///
    /// A missing `annotation_id` is generated; a missing `timestamp` is the
    /// current time.
    pub fn record_submission(&mut self, sub: AnnotationSubmission) -> Result<String, StoreError> {
        self.record_submission_at(sub, Utc::now())
    }

    pub fn record_submission_at(&mut self, sub: AnnotationSubmission, now: DateTime<Utc>) -> Result<String, StoreError> {
        if !self.state.task_index.contains_key(&sub.task_id) {
            return Err(StoreError::UnknownTask(sub.task_id));
        }
        let mut labels = BTreeMap::new();
        for (rid, raw) in &sub.labels {
            labels.insert(rid.clone(), validate_raw(rid, *raw)?);
        }
        let per_criterion = match &sub.per_criterion {
            None => None,
            Some(per) => {
                let mut out = BTreeMap::new();
                for (name, ls) in per {
                    let mut m = BTreeMap::new();
                    for (rid, raw) in ls {
                        m.insert(rid.clone(), validate_raw(rid, *raw)?);
                    }
                    out.insert(name.clone(), m);
                }
                Some(out)
            }
        };
        let duration_ms = u64::try_from(sub.duration_ms)
            .map_err(|_| StoreError::InvalidField("duration_ms<0".into()))?;
        let timestamp = match &sub.timestamp {
            Some(s) => timestamp::parse(s).map_err(|e| StoreError::InvalidField(format!("timestamp: {e}")))?,
            None => timestamp::truncate_millis(now),
        };
        let annotation_id = match sub.annotation_id {
            Some(id) if !id.is_empty() => id,
            _ => self.fresh_annotation_id(),
        };
        self.record_annotation(Annotation {
            annotation_id,
            task_id: sub.task_id,
            annotator_id: sub.annotator_id,
            labels,
            per_criterion,
            duration_ms,
            timestamp,
        })
    }

    fn fresh_annotation_id(&self) -> String {
        let mut n = self.state.history.len() + 1;
        loop {
            let id = format!("ann-{n:06}");
            if !self.state.annotation_ids.contains(&id) {
                return id;
            }
            n += 1;
        }
    }

    /// Appends an annotation. The live record per (task, annotator) is the one
    /// with the greatest timestamp; equal timestamps go to the later submission.
    pub fn record_annotation(&mut self, a: Annotation) -> Result<String, StoreError> {
        let task = self.snapshot();
        let task = task.task(&a.task_id).ok_or_else(|| StoreError::UnknownTask(a.task_id.clone()))?;
        check_annotation(task, &a)?;
        if a.annotation_id.is_empty() {
            return Err(StoreError::InvalidField("annotation_id is empty".into()));
        }
        if self.state.annotation_ids.contains(&a.annotation_id) {
            return Err(StoreError::DuplicateAnnotationId(a.annotation_id));
        }
        self.log(ANNOTATIONS_FILE, &to_canonical_line(&a).expect("annotation serializes"))?;
        let id = a.annotation_id.clone();
        let key = (a.task_id.clone(), a.annotator_id.clone());
        let state = self.state_mut();
        let idx = state.history.len();
        let supersedes = match state.live.get(&key) {
            Some(prev) => state.history[*prev].timestamp <= a.timestamp,
            None => true,
        };
        state.annotation_ids.insert(id.clone());
        state.history.push(Arc::new(a));
        if supersedes {
            state.live.insert(key, idx);
        }
        Ok(id)
    }

    /// Stores aggregates, replacing any earlier aggregate of the same task.
    pub fn put_aggregates(&mut self, aggregates: Vec<AggregatedPreference>) -> Result<(), StoreError> {
        let snap = self.snapshot();
        for agg in &aggregates {
            let task = snap.task(&agg.task_id).ok_or_else(|| StoreError::UnknownTask(agg.task_id.clone()))?;
            if let Some(r) = agg.labels.keys().find(|r| !task.has_response(r)) {
                return Err(StoreError::Coverage(format!("aggregate for {} has unknown response {r}", agg.task_id)));
            }
        }
        let mut lines = String::new();
        for agg in &aggregates {
            lines.push_str(&to_canonical_line(agg).expect("aggregate serializes"));
        }
        self.log(AGGREGATES_FILE, &lines)?;
        let state = self.state_mut();
        for agg in aggregates {
            state.aggregates.insert(agg.task_id.clone(), Arc::new(agg));
        }
        Ok(())
    }
}

fn replay(dir: &Path, file: &str, mut apply: impl FnMut(&str) -> Result<(), String>) -> Result<(), StoreError> {
    let path = dir.join(file);
    if !path.exists() {
        return Ok(());
    }
    for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        apply(&line).map_err(|reason| StoreError::Journal { file: file.to_string(), line: i + 1, reason })?;
    }
    Ok(())
}

/// Soft pairwise labels: for every unordered response pair `(a, b)` in id
/// order, `p_a = s_a / (s_a + s_b)` over defuzzified scores, or 0.5 when
/// both scores are zero.
pub fn export_preference_pairs<A: Borrow<AggregatedPreference>>(aggregates: &[A]) -> Vec<PreferencePairRecord> {
    let mut out = Vec::new();
    for agg in aggregates.iter().map(Borrow::borrow) {
        let labels: Vec<(&String, &IfsValue)> = agg.labels.iter().collect();
        for (i, (id_a, ifs_a)) in labels.iter().enumerate() {
            for (id_b, ifs_b) in &labels[i + 1..] {
                let (s_a, s_b) = (ifs_a.defuzzify(), ifs_b.defuzzify());
                let sum = s_a + s_b;
                let p_a = if sum > 0.0 { (s_a / sum).clamp(0.0, 1.0) } else { 0.5 };
                out.push(PreferencePairRecord {
                    task_id: agg.task_id.clone(),
                    response_a: (*id_a).clone(),
                    response_b: (*id_b).clone(),
                    p_a,
                    ifs_a: **ifs_a,
                    ifs_b: **ifs_b,
                });
            }
        }
    }
    out
}
