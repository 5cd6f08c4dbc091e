use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use ifspref_core::{AggregationMethod, Store};
use ifspref_service::{router, AppState};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};
use tower::ServiceExt;

const TASKS: &str = r#"{"task_id":"t1","prompt":"p","responses":[{"response_id":"a","text":"x"},{"response_id":"b","text":"y"}],"gold_preference":"b"}
{"task_id":"t2","prompt":"p","responses":[{"response_id":"a","text":"x"},{"response_id":"b","text":"y"},{"response_id":"c","text":"z"}],"criteria":[{"name":"help","weight":0.6},{"name":"safe","weight":0.4}]}
"#;

fn number(rng: &mut StdRng) -> Value {
    match rng.random_range(0..6) {
        0 => json!(rng.random_range(-2.0..3.0)),
        1 => json!(rng.random_range(0..3)),
        2 => json!("0.5"),
        3 => Value::Null,
        _ => json!(rng.random_range(0.0..0.6)),
    }
}

fn label(rng: &mut StdRng) -> Value {
    if rng.random_bool(0.7) {
        let mu: f64 = rng.random_range(0.0..1.0);
        json!({"mu": mu, "nu": rng.random_range(0.0..=1.0 - mu)})
    } else {
        json!({"mu": number(rng), "nu": number(rng)})
    }
}

fn body(rng: &mut StdRng) -> String {
    let task = ["t1", "t2", "t9", ""][rng.random_range(0..4)];
    let mut responses = vec!["a", "b"];
    if task == "t2" || rng.random_bool(0.1) {
        responses.push("c");
    }
    if rng.random_bool(0.1) {
        responses.remove(0);
    }
    if rng.random_bool(0.05) {
        responses.push("zz");
    }
    let labels: serde_json::Map<String, Value> = responses.iter().map(|r| (r.to_string(), label(rng))).collect();
    let mut v = json!({
        "task_id": task,
        "annotator_id": format!("u{}", rng.random_range(0..4)),
        "labels": labels,
        "duration_ms": rng.random_range(-10..5000),
    });
    if rng.random_bool(0.2) {
        v["per_criterion"] = json!({"help": v["labels"].clone(), "safe": v["labels"].clone()});
    }
    if rng.random_bool(0.1) {
        let ts = ["2025-02-01T10:00:00Z", "yesterday", "2025-02-01T10:00:00.5+02:00"][rng.random_range(0..3)];
        v["timestamp"] = json!(ts);
    }
    if rng.random_bool(0.05) {
        v["extra"] = json!(1);
    }
    let mut text = v.to_string();
    if rng.random_bool(0.05) {
        text.truncate(rng.random_range(0..text.len()));
    }
    text
}

#[tokio::test]
async fn random_bodies_never_persist_invalid_records() {
    let mut store = Store::in_memory();
    store.import_tasks(TASKS.as_bytes()).unwrap();
    let state = AppState::new(store, AggregationMethod::DynamicWeighting);
    let app = router(state.clone(), None);
    let mut rng = StdRng::seed_from_u64(7);
    let mut created = 0;
    for _ in 0..1500 {
        let req = match rng.random_range(0..10) {
            0 => Request::post("/api/aggregate?method=dynamic").body(Body::empty()),
            1 => Request::get("/api/reports/quality").body(Body::empty()),
            _ => Request::post("/api/annotations").body(Body::from(body(&mut rng))),
        }
        .unwrap();
        let resp = app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        if status.as_u16() == 201 {
            created += 1;
        } else if !status.is_success() {
            let v: Value = serde_json::from_slice(&bytes).unwrap();
            assert!(v["error"].is_string() && v["reason"].is_string());
            assert!(status.is_client_error(), "{status} {v}");
        }
    }
    assert!(created > 0);
    let snap = state.snapshot();
    snap.verify_integrity().unwrap();
    for a in snap.history() {
        for label in a.labels.values() {
            assert!(label.mu() + label.nu() <= 1.0 + 1e-9);
        }
    }
}
