//! Route-level tests against the shipped models.

use std::path::PathBuf;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use recourse_core::io::parse_model_str;
use recourse_service::{router, AppState, ModelStore, ServiceConfig};

fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn app_with(config: ServiceConfig) -> Router {
    let mut store = ModelStore::load_dir(models_dir()).unwrap();
    // Two independent roots that are perfectly correlated: no unconfounded model fits.
    let clash = r#"{"version":1,
        "variables":[{"name":"A","cardinality":2},{"name":"B","cardinality":2},{"name":"C","cardinality":2}],
        "edges":[["A","C"],["B","C"]],"confounding":{"mode":"NONE"},
        "observational":{"table":[0.25,0,0,0.25,0.25,0,0,0.25]},
        "classifier":{"table":[0,0,0,0,1,1,1,1]}}"#;
    store.insert("clash", parse_model_str(clash, &models_dir()).unwrap());
    router(AppState::new(store, config))
}

fn app() -> Router {
    app_with(ServiceConfig::default())
}

async fn send(app: &Router, request: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Value) {
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let headers = response.headers().clone();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let body = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, headers, body)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(uri: &str, body: Value) -> Request<Body> {
    Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn without_timing(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("compute_ms");
    v
}

#[tokio::test]
async fn health_and_listing() {
    let app = app();
    let (status, _, body) = send(&app, get("/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert!(body["compute_ms"].is_number());

    let (status, _, body) = send(&app, get("/models")).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = body["models"].as_array().unwrap().iter().map(|m| m["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["chain", "clash", "golden_seed0", "two_node"]);
    assert!(body["compute_ms"].is_number());
}

#[tokio::test]
async fn schema_lists_variables_and_actionability() {
    let (status, _, body) = send(&app(), get("/models/two_node")).await;
    assert_eq!(status, StatusCode::OK);
    let vars = body["variables"].as_array().unwrap();
    assert_eq!(vars.len(), 2);
    assert_eq!(vars[0]["name"], "X1");
    assert_eq!(vars[0]["cardinality"], 2);
    assert_eq!(vars[0]["actionable"], true);
    assert_eq!(vars[1]["actionable"], false);
    assert_eq!(vars[1]["parents"], json!(["X1"]));
    assert_eq!(body["confounding"]["mode"], "NONE");
    assert!(body["compute_ms"].is_number());
}

#[tokio::test]
async fn bounds_on_the_two_node_model() {
    let app = app();
    let q = json!({"factual": "X1=0,X2=0", "action": "X1=1", "mode": "fc", "objective": "expected"});
    let (status, _, body) = send(&app, post("/models/two_node/bounds", q)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["lb"], 0.0);
    assert_eq!(body["ub"], 1.0);
    assert_eq!(body["certified"], true);
    assert_eq!(body["method"], "FC_LP");
    assert!(body["compute_ms"].as_f64().unwrap() >= 0.0);

    // Map-form factual and defaults for mode and objective.
    let q = json!({"factual": {"X1": 0, "X2": 0}, "action": {"X1": 1}, "mode": "pc"});
    let (status, _, body) = send(&app, post("/models/two_node/bounds", q)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["method"], "PC_GRID");
    assert!((body["lb"].as_f64().unwrap() - 0.6).abs() <= 0.05);
}

#[tokio::test]
async fn recourse_without_a_qualifying_action() {
    let q = json!({"factual": "X1=0,X2=0", "threshold": 0.5, "epsilon": 0.0, "mode": "fc", "objective": "expected"});
    let (status, _, body) = send(&app(), post("/models/two_node/recourse", q)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["chosen"], Value::Null);
    let actions = body["actions"].as_array().unwrap();
    assert_eq!(actions.len(), 1);
    assert_eq!(actions[0]["action"], "X1=1");
    assert_eq!(actions[0]["cost"], 1.0);
    assert!(body["compute_ms"].is_number());
}

#[tokio::test]
async fn error_statuses() {
    let app = app();
    let (status, _, body) = send(&app, get("/models/unknown")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("unknown"));
    let q = json!({"factual": "X1=0,X2=0", "action": "X1=1"});
    assert_eq!(send(&app, post("/models/unknown/bounds", q.clone())).await.0, StatusCode::NOT_FOUND);
    assert_eq!(send(&app, get("/nowhere")).await.0, StatusCode::NOT_FOUND);

    let zero = json!({"factual": "X1=0,X2=0,X3=0", "action": "X2=1"});
    let (status, _, body) = send(&app, post("/models/golden_seed0/bounds", zero)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "factual has zero probability");

    for bad in [
        json!({"factual": "X1=0", "action": "X1=1"}),
        json!({"factual": "X1=0,X2=0", "action": "X7=1"}),
        json!({"factual": "X1=0,X2=0", "action": "X1=1", "colour": "red"}),
        json!({"factual": "X1=0,X2=0", "action": "X1=1", "mode": "xx"}),
        json!({"factual": "X1=0,X2=0"}),
    ] {
        let (status, _, body) = send(&app, post("/models/two_node/bounds", bad.clone())).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{bad} -> {body}");
        assert!(body["error"].is_string());
    }
    let garbage = Request::post("/models/two_node/bounds").body(Body::from("{not json")).unwrap();
    assert_eq!(send(&app, garbage).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let q = json!({"factual": "A=0,B=0,C=0", "action": "A=1", "mode": "pc"});
    let (status, _, body) = send(&app, post("/models/clash/bounds", q)).await;
    assert_eq!(status, StatusCode::CONFLICT, "{body}");
}

#[tokio::test]
async fn slow_requests_get_503_with_a_retry_hint() {
    let app = app_with(ServiceConfig { timeout: Duration::from_millis(1), max_concurrent: 1 });
    let q = json!({"factual": "X1=0,X2=0,X3=0", "mode": "pc"});
    let (status, headers, body) = send(&app, post("/models/chain/recourse", q)).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE, "{body}");
    assert!(headers.contains_key(header::RETRY_AFTER));
    assert!(body["retry_after_s"].as_u64().unwrap() >= 1);
}

#[tokio::test]
async fn cors_is_permissive() {
    let request = Request::get("/health").header(header::ORIGIN, "http://localhost:5173").body(Body::empty()).unwrap();
    let (_, headers, _) = send(&app(), request).await;
    assert_eq!(headers[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");

    let preflight = Request::options("/models/two_node/bounds")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .header(header::ACCESS_CONTROL_REQUEST_HEADERS, "content-type")
        .body(Body::empty())
        .unwrap();
    let (status, headers, _) = send(&app(), preflight).await;
    assert!(status.is_success());
    assert!(headers.contains_key(header::ACCESS_CONTROL_ALLOW_METHODS));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_identical_requests_agree() {
    let app = app();
    let q = json!({"factual": "X1=0,X2=0,X3=0", "mode": "fc", "threshold": 0.6});
    let runs = (0..6).map(|_| {
        let app = app.clone();
        let q = q.clone();
        tokio::spawn(async move { send(&app, post("/models/chain/recourse", q)).await })
    });
    let mut bodies = Vec::new();
    for run in runs {
        let (status, _, body) = run.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        bodies.push(without_timing(body));
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}
