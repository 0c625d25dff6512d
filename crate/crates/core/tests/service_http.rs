mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use sqlreward::service::{router, RewardService, ServiceConfig};

struct Fixture {
    _dir: tempfile::TempDir,
    svc: Arc<RewardService>,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    common::build_desk(dir.path());
    let svc = Arc::new(RewardService::new(ServiceConfig::new(dir.path())));
    Fixture { _dir: dir, svc }
}

async fn call(svc: &Arc<RewardService>, method: &str, path: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(path)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = router(svc.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(svc: &Arc<RewardService>, method: &str, path: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(svc, method, path, body).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn completion(sql: &str) -> String {
    format!("<reasoning>look it up</reasoning>\n<answer>{sql}</answer>")
}

#[tokio::test]
async fn health() {
    let f = fixture();
    let (status, body) = call(&f.svc, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"ok");
}

#[tokio::test]
async fn scores_batch_in_request_order() {
    let f = fixture();
    let body = json!({"items": [
        {"id": "b", "db_id": "club", "gold_sql": "SELECT name FROM team", "completion": completion("SELEC name FROM team")},
        {"id": 7, "db_id": "club", "gold_sql": "SELECT name FROM team", "completion": completion("SELECT name FROM team"), "kind": "exfm"},
        {"id": "m", "db_id": "nowhere", "gold_sql": "SELECT 1", "completion": completion("SELECT 1")}
    ]});
    let (status, out) = call_json(&f.svc, "POST", "/v1/score", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    let results = out["results"].as_array().unwrap();
    assert_eq!(results[0]["id"], "b");
    assert_eq!(results[0]["composite"], 0.0);
    assert_eq!(results[0]["error_class"], "SyntaxError");
    assert_eq!(results[1]["id"], 7);
    assert_eq!(results[1]["composite"], 1.0);
    assert_eq!(results[1]["components"]["ex"], 1);
    assert_eq!(results[2]["error_class"], "DbMissing");
    assert!(out["timing"]["total_ms"].as_f64().unwrap() >= 0.0);
}

#[tokio::test]
async fn gold_failure_is_reported_per_item() {
    let f = fixture();
    let body = json!({"items": [
        {"id": 1, "db_id": "club", "gold_sql": "SELECT nope FROM team", "completion": completion("SELECT 1")}
    ]});
    let (status, out) = call_json(&f.svc, "POST", "/v1/score", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(out["results"][0]["error_class"], "GoldExecutionError");
}

#[tokio::test]
async fn repeated_request_hits_cache() {
    let f = fixture();
    let body = json!({"items": [
        {"id": 1, "db_id": "library", "gold_sql": "SELECT title FROM book", "completion": completion("SELECT title FROM book")}
    ]});
    call_json(&f.svc, "POST", "/v1/score", Some(body.clone())).await;
    let (_, before) = call_json(&f.svc, "GET", "/v1/stats", None).await;
    call_json(&f.svc, "POST", "/v1/score", Some(body)).await;
    let (_, after) = call_json(&f.svc, "GET", "/v1/stats", None).await;
    assert!(after["cache_hits"].as_u64() > before["cache_hits"].as_u64());
    assert_eq!(after["requests_served"], 2);
    assert_eq!(after["items_scored"], 2);
}

#[tokio::test]
async fn advantages_endpoint() {
    let f = fixture();
    let (status, out) = call_json(
        &f.svc,
        "POST",
        "/v1/advantages",
        Some(json!({"groups": [[1.0, 0.0], [0.3, 0.3]], "strategy": "none"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(out["advantages"], json!([[0.5, -0.5], [0.0, 0.0]]));
    let (status, out) = call_json(&f.svc, "POST", "/v1/advantages", Some(json!({"groups": [], "strategy": "group"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(out["error"].is_string());
}

#[tokio::test]
async fn malformed_bodies_are_rejected() {
    let f = fixture();
    for body in [json!({"items": 3}), json!({"groups": "x"})] {
        let (status, out) = call_json(&f.svc, "POST", "/v1/score", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert!(out["error"].is_string());
    }
    let dup = json!({"items": [
        {"id": 1, "db_id": "club", "gold_sql": "SELECT 1", "completion": ""},
        {"id": 1, "db_id": "club", "gold_sql": "SELECT 1", "completion": ""}
    ]});
    let (status, _) = call_json(&f.svc, "POST", "/v1/score", Some(dup)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}
