use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use serpeval_core::clock::SystemClock;
use serpeval_core::config::StudyConfig;
use serpeval_core::pipeline;
use tower::ServiceExt;

const ADMIN: &str = "demo-admin-token";

struct Env {
    _dir: tempfile::TempDir,
    app: Router,
}

fn env() -> Env {
    let dir = tempfile::tempdir().unwrap();
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo");
    let mut cfg = StudyConfig::load(&demo.join("study.toml")).unwrap();
    cfg.paths.store = dir.path().join("store");
    let store = pipeline::open_store(&cfg).unwrap();
    pipeline::cmd_sample(&cfg, &store).unwrap();
    pipeline::cmd_collect(&cfg, &store, None).unwrap();
    let study = pipeline::open_study(&cfg, &store, Arc::new(SystemClock)).unwrap();
    Env {
        _dir: dir,
        app: serpeval_server::router(Arc::new(study), ADMIN),
    }
}

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {:?}", String::from_utf8_lossy(&self.body)))
    }
}

async fn call(app: &Router, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

async fn new_session(app: &Router) -> String {
    let r = call(app, Method::POST, "/sessions", None, Some(json!({"access_code": "demo-juror-1"}))).await;
    assert_eq!(r.status, StatusCode::CREATED);
    r.json()["session_id"].as_str().unwrap().to_string()
}

#[tokio::test(flavor = "multi_thread")]
async fn sessions_and_access_codes() {
    let e = env();
    let r = call(&e.app, Method::POST, "/sessions", None, Some(json!({"access_code": "nope"}))).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);
    assert_eq!(r.json()["error"], "invalid-code");

    let r = call(&e.app, Method::POST, "/sessions", None, Some(json!({"code": 1}))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.json()["error"], "bad-request");

    let r = call(
        &e.app,
        Method::POST,
        "/sessions",
        None,
        Some(json!({"access_code": "demo-juror-2", "contact": "juror@example.org"})),
    )
    .await;
    assert_eq!(r.status, StatusCode::CREATED);
    let r = call(
        &e.app,
        Method::POST,
        "/sessions",
        None,
        Some(json!({"access_code": "demo-juror-2", "contact": "not an address"})),
    )
    .await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let r = call(&e.app, Method::GET, "/sessions/unknown/task", None, None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.json()["error"], "unknown-session");
}

#[tokio::test(flavor = "multi_thread")]
async fn judging_a_task() {
    let e = env();
    let s = new_session(&e.app).await;
    let task = call(&e.app, Method::GET, &format!("/sessions/{s}/task"), None, None).await;
    assert_eq!(task.status, StatusCode::OK);
    let task = task.json();
    let results = task["results"].as_array().unwrap();
    assert!(!results.is_empty());
    assert_eq!(task["progress"]["visited"], 0);

    let seen = results.iter().find(|r| r["document"].is_string()).unwrap();
    let id = seen["pooled_id"].as_str().unwrap();
    let path = format!("/sessions/{s}/judgments");

    let r = call(&e.app, Method::POST, &path, None, Some(json!({"pooled_id": id, "graded": 9}))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json()["error"], "invalid-judgment");

    let r = call(&e.app, Method::POST, &path, None, Some(json!({"pooled_id": "p-unknown", "skipped": true}))).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.json()["error"], "foreign-result");

    let r = call(
        &e.app,
        Method::POST,
        &path,
        None,
        Some(json!({"pooled_id": id, "binary": "relevant", "graded": 3})),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    let ack = r.json();
    assert_eq!(ack["completion"]["progress"]["visited"], 1);
    assert_eq!(ack["completion"]["voucher_issued"], false);

    let again = call(&e.app, Method::GET, &format!("/sessions/{s}/task"), None, None).await.json();
    assert_eq!(again["task_id"], task["task_id"]);
    let view = again["results"].as_array().unwrap().iter().find(|r| r["pooled_id"] == id).unwrap();
    assert_eq!(view["judgment"], json!({"binary": "relevant", "graded": 3, "skipped": false}));
}

#[tokio::test(flavor = "multi_thread")]
async fn snapshots_are_sandboxed() {
    let e = env();
    let s = new_session(&e.app).await;
    let task = call(&e.app, Method::GET, &format!("/sessions/{s}/task"), None, None).await.json();
    let doc = task["results"]
        .as_array()
        .unwrap()
        .iter()
        .find_map(|r| r["document"].as_str())
        .unwrap()
        .to_string();
    let r = call(&e.app, Method::GET, &doc, None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(String::from_utf8_lossy(&r.body).contains("demo-judgment"));
    assert_eq!(r.headers[header::CONTENT_SECURITY_POLICY], serpeval_server::SNAPSHOT_CSP);
    assert_eq!(r.headers[header::X_CONTENT_TYPE_OPTIONS], "nosniff");
    assert_eq!(r.headers[header::REFERRER_POLICY], "no-referrer");
    assert!(r.headers[header::CONTENT_TYPE].to_str().unwrap().starts_with("text/html"));

    let r = call(&e.app, Method::GET, &format!("/snapshots/{}", "0".repeat(64)), None, None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = call(&e.app, Method::GET, "/snapshots/..%2F..%2Fstudy.json", None, None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn no_task_left_is_204() {
    let e = env();
    // 30 informational tasks; hold every one.
    for _ in 0..30 {
        let s = new_session(&e.app).await;
        let r = call(&e.app, Method::GET, &format!("/sessions/{s}/task"), None, None).await;
        assert_eq!(r.status, StatusCode::OK);
    }
    let s = new_session(&e.app).await;
    let r = call(&e.app, Method::GET, &format!("/sessions/{s}/task"), None, None).await;
    assert_eq!(r.status, StatusCode::NO_CONTENT);
    assert!(r.body.is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn admin_routes_need_the_token() {
    let e = env();
    for (method, uri) in [
        (Method::GET, "/runs/replay-1/progress"),
        (Method::GET, "/verdicts/pending"),
        (Method::GET, "/vouchers/pending"),
        (Method::POST, "/verdicts"),
    ] {
        for token in [None, Some("demo-admin-tokeN"), Some("")] {
            let r = call(&e.app, method.clone(), uri, token, Some(json!({}))).await;
            assert_eq!(r.status, StatusCode::UNAUTHORIZED, "{method} {uri} {token:?}");
            assert_eq!(r.json()["error"], "unauthorized");
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn progress_verdicts_and_vouchers() {
    let e = env();
    let p = call(&e.app, Method::GET, "/runs/replay-1/progress", Some(ADMIN), None).await;
    assert_eq!(p.status, StatusCode::OK);
    let p = p.json();
    assert_eq!(p["tasks"], 30);
    assert_eq!(p["collection"]["attempted"], 120);
    assert_eq!(
        call(&e.app, Method::GET, "/runs/other/progress", Some(ADMIN), None).await.status,
        StatusCode::NOT_FOUND
    );

    let items = call(&e.app, Method::GET, "/verdicts/pending", Some(ADMIN), None).await.json();
    let items = items.as_array().unwrap().clone();
    assert!(!items.is_empty());
    let first = &items[0];
    assert!(first.get("targets").is_none() && first.get("engine_id").is_none());

    let body = json!({"item_id": first["item_id"], "correct": true, "assessor": "ra"});
    let r = call(&e.app, Method::POST, "/verdicts", Some(ADMIN), Some(body.clone())).await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert!(r.json()["recorded"].as_u64().unwrap() >= 1);
    let r = call(&e.app, Method::POST, "/verdicts", Some(ADMIN), Some(body)).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.json()["error"], "duplicate-verdict");

    let r = call(
        &e.app,
        Method::POST,
        "/verdicts",
        Some(ADMIN),
        Some(json!({"item_id": "missing", "correct": true, "assessor": "ra"})),
    )
    .await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    // The (query, engine) form, for an item not yet settled.
    let second = &items[1];
    let q = second["query"].as_str().unwrap();
    let mut recorded = 0;
    for engine in ["kestrel", "osprey"] {
        let r = call(
            &e.app,
            Method::POST,
            "/verdicts",
            Some(ADMIN),
            Some(json!({"query": q, "engine_id": engine, "correct": false, "assessor": "ra"})),
        )
        .await;
        if r.status == StatusCode::CREATED {
            recorded += 1;
        } else {
            assert_eq!(r.status, StatusCode::BAD_REQUEST, "{}", r.json());
        }
    }
    assert!(recorded >= 1);
    let left = call(&e.app, Method::GET, "/verdicts/pending", Some(ADMIN), None).await.json();
    assert_eq!(left.as_array().unwrap().len(), items.len() - 2);

    let v = call(&e.app, Method::GET, "/vouchers/pending?after=5", Some(ADMIN), None).await;
    assert_eq!(v.status, StatusCode::OK);
    assert_eq!(v.json(), json!([]));
}
