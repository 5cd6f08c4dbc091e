use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use ifspref_core::aggregation::{AggregateOptions, DynamicWeightConfig, IfwaForm};
use ifspref_core::canonical::{to_canonical_string, RealFormat};
use ifspref_core::quality::{AgreementMode, QualityScoreConfig, ReportOptions};
use ifspref_core::store::{AnnotationSubmission, ExportKind};
use ifspref_core::{AggregationMethod, Snapshot, Store, StoreError};
use serde_json::json;
use tower_http::cors::CorsLayer;

use crate::ops::{self, OpError};

/// Shared service state: one writer, plus the latest published snapshot.
pub struct AppState {
    writer: Mutex<Store>,
    published: RwLock<Snapshot>,
    default_method: AggregationMethod,
}

impl AppState {
    pub fn new(store: Store, default_method: AggregationMethod) -> Arc<Self> {
        let published = RwLock::new(store.snapshot());
        Arc::new(Self { writer: Mutex::new(store), published, default_method })
    }

    pub fn snapshot(&self) -> Snapshot {
        self.published.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn write<R>(&self, f: impl FnOnce(&mut Store) -> R) -> Result<R, ApiError> {
        let mut store = self.writer.lock().map_err(|_| ApiError::internal("store writer poisoned"))?;
        let out = f(&mut store);
        *self.published.write().unwrap_or_else(|e| e.into_inner()) = store.snapshot();
        Ok(out)
    }
}

/// Error body: `{"error": code, "reason": text}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    reason: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, reason: impl Into<String>) -> Self {
        Self { status, code, reason: reason.into() }
    }

    fn bad_request(code: &'static str, reason: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, reason)
    }

    fn internal(reason: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", reason)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.code, "reason": self.reason});
        json_response(self.status, to_canonical_string(&body, RealFormat::Shortest).expect("error body"))
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::UnknownTask(_) => StatusCode::NOT_FOUND,
            StoreError::DuplicateAnnotationId(_) | StoreError::DuplicateTaskId(_) => StatusCode::CONFLICT,
            StoreError::Io(_) | StoreError::Journal { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, e.code(), e.reason())
    }
}

impl From<OpError> for ApiError {
    fn from(e: OpError) -> Self {
        let status = match e {
            OpError::Store(s) => return s.into(),
            OpError::NoAnnotations | OpError::EmptyDataset => StatusCode::CONFLICT,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, e.code(), e.reason())
    }
}

fn json_response(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

type Params = Result<Query<HashMap<String, String>>, QueryRejection>;

fn params(q: Params) -> Result<HashMap<String, String>, ApiError> {
    q.map(|Query(m)| m).map_err(|e| ApiError::bad_request("malformed_query", e.body_text()))
}

fn parse_param<T: std::str::FromStr>(p: &HashMap<String, String>, key: &str) -> Result<Option<T>, ApiError> {
    p.get(key)
        .map(|raw| raw.parse::<T>().map_err(|_| ApiError::bad_request("invalid_parameter", format!("{key}={raw}"))))
        .transpose()
}

fn coefficients(p: &HashMap<String, String>, keys: [&str; 3]) -> Result<Option<(f64, f64, f64)>, ApiError> {
    let vals = keys.map(|k| parse_param::<f64>(p, k));
    let [a, b, c] = vals;
    match (a?, b?, c?) {
        (None, None, None) => Ok(None),
        (Some(a), Some(b), Some(c)) => Ok(Some((a, b, c))),
        _ => Err(ApiError::bad_request("invalid_parameter", format!("{} must be given together", keys.join(", ")))),
    }
}

/// Reads the aggregation options from query parameters.
pub fn aggregate_options(p: &HashMap<String, String>) -> Result<AggregateOptions, ApiError> {
    let dynamic = match coefficients(p, ["alpha", "beta", "gamma"])? {
        None => DynamicWeightConfig::default(),
        Some((a, b, c)) => DynamicWeightConfig::new(a, b, c)
            .map_err(|e| ApiError::bad_request("invalid_parameter", e.to_string()))?,
    };
    let ifwa_form = match p.get("ifwa_form") {
        None => IfwaForm::default(),
        Some(f) => f.parse().map_err(|e: String| ApiError::bad_request("invalid_parameter", e))?,
    };
    Ok(AggregateOptions { dynamic, ifwa_form })
}

/// Reads the report options from query parameters.
pub fn report_options(p: &HashMap<String, String>) -> Result<ReportOptions, ApiError> {
    let agreement_mode = match p.get("agreement_mode") {
        None => AgreementMode::default(),
        Some(m) => m.parse().map_err(|e: String| ApiError::bad_request("invalid_parameter", e))?,
    };
    let score = match coefficients(p, ["alpha", "beta", "gamma"])? {
        None => QualityScoreConfig::default(),
        Some((a, b, c)) => {
            QualityScoreConfig::new(a, b, c).map_err(|e| ApiError::bad_request("invalid_parameter", e.to_string()))?
        }
    };
    let weights = match coefficients(p, ["weight_alpha", "weight_beta", "weight_gamma"])? {
        None => DynamicWeightConfig::default(),
        Some((a, b, c)) => DynamicWeightConfig::new(a, b, c)
            .map_err(|e| ApiError::bad_request("invalid_parameter", e.to_string()))?,
    };
    Ok(ReportOptions { agreement_mode, score, weights })
}

async fn next_task(State(app): State<Arc<AppState>>, q: Params) -> Result<Response, ApiError> {
    let p = params(q)?;
    let annotator = p
        .get("annotator_id")
        .filter(|a| !a.is_empty())
        .ok_or_else(|| ApiError::bad_request("missing_annotator_id", "annotator_id is required"))?;
    let snapshot = app.snapshot();
    Ok(match snapshot.next_task_for(annotator) {
        Some(task) => json_response(StatusCode::OK, to_canonical_string(task, RealFormat::Shortest).expect("task")),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn post_annotation(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let value: serde_json::Value =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("malformed_body", e.to_string()))?;
    let submission: AnnotationSubmission =
        serde_json::from_value(value).map_err(|e| ApiError::bad_request("malformed_body", e.to_string()))?;
    let id = app.write(|store| store.record_submission(submission))??;
    let body = json!({ "annotation_id": id });
    Ok(json_response(StatusCode::CREATED, to_canonical_string(&body, RealFormat::Shortest).expect("id body")))
}

async fn post_aggregate(State(app): State<Arc<AppState>>, q: Params) -> Result<Response, ApiError> {
    let p = params(q)?;
    let method = match p.get("method") {
        None => app.default_method,
        Some(m) => m.parse().map_err(|e: String| ApiError::bad_request("unknown_method", e))?,
    };
    let options = aggregate_options(&p)?;
    let aggregates = app.write(|store| ops::run_aggregation(store, method, &options))??;
    Ok(json_response(StatusCode::OK, ops::aggregates_json(&aggregates)))
}

async fn quality(State(app): State<Arc<AppState>>, q: Params) -> Result<Response, ApiError> {
    let options = report_options(&params(q)?)?;
    let report = ops::build_report(&app.snapshot(), &options)?;
    Ok(json_response(StatusCode::OK, report.to_canonical_json()))
}

async fn export(State(app): State<Arc<AppState>>, q: Params) -> Result<Response, ApiError> {
    let p = params(q)?;
    let kind: ExportKind = p
        .get("kind")
        .ok_or_else(|| ApiError::bad_request("unknown_kind", "kind is required"))?
        .parse()
        .map_err(|e: String| ApiError::bad_request("unknown_kind", e))?;
    let body = app.snapshot().export(kind);
    Ok((StatusCode::OK, [(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed")
}

pub fn router(state: Arc<AppState>, cors_allowed_origin: Option<&str>) -> Router {
    let router = Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/annotations", post(post_annotation))
        .route("/api/aggregate", post(post_aggregate))
        .route("/api/reports/quality", get(quality))
        .route("/api/export", get(export))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(state);
    match cors_allowed_origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(origin) => router.layer(
            CorsLayer::new()
                .allow_origin(origin)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE]),
        ),
        None => router,
    }
}
