use std::fmt::Write as _;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use ifspref_core::aggregation::AggregateOptions;
use ifspref_core::canonical::{to_canonical_string, RealFormat};
use ifspref_core::simulator::{generate_corpus, SimConfig};
use ifspref_core::store::{ImportReport, LineError};
use ifspref_core::{
    DynamicWeightConfig, Execution, QualityScoreConfig, ReportOptions, Store, StoreError, Winner,
};
use ifspref_service::ops::{self, OpError};
use ifspref_service::{ServiceConfig, ServiceError};
use serde_json::json;
use thiserror::Error;

use crate::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{reason}")]
    Validation { code: String, reason: String },
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn validation(code: &str, reason: impl Into<String>) -> Self {
        CliError::Validation { code: code.into(), reason: reason.into() }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation { .. } => 1,
            CliError::Io(_) => 2,
        }
    }

    pub fn to_json(&self) -> String {
        let body = match self {
            CliError::Validation { code, reason } => json!({"error": code, "reason": reason}),
            CliError::Io(reason) => json!({"error": "io_error", "reason": reason}),
        };
        to_canonical_string(&body, RealFormat::Shortest).expect("error body")
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io(e) => CliError::Io(e.to_string()),
            StoreError::Journal { .. } => CliError::Io(e.to_string()),
            other => CliError::validation(other.code(), other.reason()),
        }
    }
}

impl From<OpError> for CliError {
    fn from(e: OpError) -> Self {
        match e {
            OpError::Store(s) => s.into(),
            other => CliError::validation(other.code(), other.reason()),
        }
    }
}

/// What a successful command prints: `json` under `--json`, `human` otherwise.
pub struct Output {
    pub human: String,
    pub json: String,
}

fn canonical(v: &serde_json::Value) -> String {
    to_canonical_string(v, RealFormat::Shortest).expect("json value")
}

fn open_store(dir: &Path) -> Result<Store, CliError> {
    Store::open(dir).map_err(|e| match e {
        StoreError::Io(err) => CliError::io(dir, err),
        other => other.into(),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn dynamic_config(triple: Option<(f64, f64, f64)>) -> Result<DynamicWeightConfig, CliError> {
    match triple {
        None => Ok(DynamicWeightConfig::default()),
        Some((a, b, c)) => DynamicWeightConfig::new(a, b, c).map_err(|e| CliError::validation("invalid_config", e.to_string())),
    }
}

pub fn run(cli: Cli) -> Result<Output, CliError> {
    let data = cli.data;
    match cli.command {
        Command::Import { tasks, annotations, allow_partial } => import(&data, tasks, annotations, allow_partial),
        Command::Simulate { tasks, annotators, seed, out, config, gold_fraction } => {
            simulate(tasks, annotators, seed, &out, config, gold_fraction)
        }
        Command::Aggregate { method, coefficients, ifwa_form } => {
            let options = AggregateOptions { dynamic: dynamic_config(coefficients.triple())?, ifwa_form };
            let mut store = open_store(&data)?;
            let aggregates = ops::run_aggregation(&mut store, method, &options)?;
            let mut human = String::new();
            for a in &aggregates {
                let winner = match &a.winner {
                    Winner::Response(r) => r.as_str(),
                    Winner::Tie => "tie",
                };
                let _ = writeln!(human, "{}\t{}\tmargin={:.6}", a.task_id, winner, a.margin);
            }
            let _ = write!(human, "aggregated {} tasks with {}", aggregates.len(), method.as_str());
            Ok(Output { human, json: ops::aggregates_json(&aggregates) })
        }
        Command::Quality { agreement_mode, score, weights, out } => {
            let score = match score.triple() {
                None => QualityScoreConfig::default(),
                Some((a, b, c)) => {
                    QualityScoreConfig::new(a, b, c).map_err(|e| CliError::validation("invalid_config", e.to_string()))?
                }
            };
            let options = ReportOptions { agreement_mode, score, weights: dynamic_config(weights.triple())? };
            let store = open_store(&data)?;
            let report = ops::build_report(&store.snapshot(), &options)?;
            let body = report.to_canonical_json();
            if let Some(out) = &out {
                write_file(out, &format!("{body}\n"))?;
            }
            let agreement = report.agreement.map_or_else(|| "n/a".to_string(), |a| format!("{a:.6}"));
            let human = format!(
                "tasks={} annotations={}\nconfidence={:.6}\nclarity={:.6}\nagreement={} ({})\nconsistency={:.6}\nquality_score={:.6}",
                report.n_tasks,
                report.n_annotations,
                report.confidence,
                report.clarity,
                agreement,
                report.agreement_mode.as_str(),
                report.consistency,
                report.quality_score,
            );
            Ok(Output { human, json: body })
        }
        Command::Export { kind, out } => {
            let store = open_store(&data)?;
            let body = store.snapshot().export(kind);
            write_file(&out, &body)?;
            let records = body.lines().count();
            Ok(Output {
                human: format!("wrote {records} {} records to {}", kind.as_str(), out.display()),
                json: canonical(&json!({"kind": kind.as_str(), "out": out.display().to_string(), "records": records})),
            })
        }
        Command::Serve { port, method, cors_origin } => {
            let config = ServiceConfig { listen_port: port, data_dir: data, default_method: method, cors_allowed_origin: cors_origin };
            config.validate().map_err(service_error)?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
            runtime.block_on(ifspref_service::serve(config)).map_err(service_error)?;
            Ok(Output { human: String::new(), json: String::new() })
        }
    }
}

fn service_error(e: ServiceError) -> CliError {
    match e {
        ServiceError::Config(reason) => CliError::validation("invalid_config", reason),
        ServiceError::Store(s) => s.into(),
        ServiceError::Io(e) => CliError::Io(e.to_string()),
    }
}

fn read_source(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

fn apply(
    store: &mut Store,
    tasks: Option<&Path>,
    annotations: Option<&Path>,
) -> Result<(ImportReport, ImportReport), CliError> {
    let t = match tasks {
        Some(p) => store.import_tasks(read_source(p)?).map_err(|e| import_io(p, e))?,
        None => ImportReport::default(),
    };
    let a = match annotations {
        Some(p) => store.import_annotations(read_source(p)?).map_err(|e| import_io(p, e))?,
        None => ImportReport::default(),
    };
    Ok((t, a))
}

fn import_io(path: &Path, e: StoreError) -> CliError {
    match e {
        StoreError::Io(err) => CliError::io(path, err),
        other => other.into(),
    }
}

fn line_errors_json(errors: &[LineError]) -> serde_json::Value {
    errors.iter().map(|e| json!({"line": e.line, "error": e.code, "reason": e.reason})).collect()
}

fn import(
    data: &Path,
    tasks: Option<PathBuf>,
    annotations: Option<PathBuf>,
    allow_partial: bool,
) -> Result<Output, CliError> {
    if tasks.is_none() && annotations.is_none() {
        return Err(CliError::validation("invalid_arguments", "nothing to import: give --tasks and/or --annotations"));
    }
    let mut store = open_store(data)?;
    if !allow_partial {
        // Validate everything against a throwaway copy first.
        let mut trial = store.detached();
        let (t, a) = apply(&mut trial, tasks.as_deref(), annotations.as_deref())?;
        if !(t.is_clean() && a.is_clean()) {
            let mut reason = String::from("import rejected; store unchanged");
            for (name, report) in [("tasks", &t), ("annotations", &a)] {
                for e in &report.errors {
                    let _ = write!(reason, "\n  {name} line {}: {} ({})", e.line, e.reason, e.code);
                }
            }
            return Err(CliError::validation("import_rejected", reason));
        }
    }
    let (t, a) = apply(&mut store, tasks.as_deref(), annotations.as_deref())?;
    let mut human = format!("imported {} tasks, {} annotations", t.count, a.count);
    for (name, report) in [("tasks", &t), ("annotations", &a)] {
        for e in &report.errors {
            let _ = write!(human, "\nskipped {name} line {}: {} ({})", e.line, e.reason, e.code);
        }
    }
    let json = canonical(&json!({
        "tasks": {"imported": t.count, "errors": line_errors_json(&t.errors)},
        "annotations": {"imported": a.count, "errors": line_errors_json(&a.errors)},
    }));
    Ok(Output { human, json })
}

fn simulate(
    n_tasks: usize,
    annotators: Option<usize>,
    seed: u64,
    out: &Path,
    config: Option<PathBuf>,
    gold_fraction: Option<f64>,
) -> Result<Output, CliError> {
    let mut cfg = match &config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let cfg: SimConfig =
                serde_json::from_str(&text).map_err(|e| CliError::validation("invalid_config", e.to_string()))?;
            if let Some(k) = annotators.filter(|&k| k != cfg.annotators.len()) {
                return Err(CliError::validation(
                    "invalid_config",
                    format!("--annotators {k} disagrees with {} annotators in the config", cfg.annotators.len()),
                ));
            }
            cfg
        }
        None => {
            let k = annotators
                .ok_or_else(|| CliError::validation("invalid_arguments", "--annotators or --config is required"))?;
            SimConfig::uniform(k)
        }
    };
    if let Some(g) = gold_fraction {
        cfg.gold_fraction = g;
    }
    let corpus = generate_corpus(n_tasks, &cfg, seed, Execution::default())
        .map_err(|e| CliError::validation("invalid_config", e.to_string()))?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_file(&out.join("tasks.jsonl"), &corpus.tasks_jsonl())?;
    write_file(&out.join("annotations.jsonl"), &corpus.annotations_jsonl())?;
    Ok(Output {
        human: format!(
            "wrote {} tasks and {} annotations to {}",
            corpus.tasks.len(),
            corpus.annotations.len(),
            out.display()
        ),
        json: canonical(&json!({
            "out": out.display().to_string(),
            "tasks": corpus.tasks.len(),
            "annotations": corpus.annotations.len(),
            "seed": seed,
        })),
    })
}
