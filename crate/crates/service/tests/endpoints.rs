use std::path::PathBuf;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use coref_adjudication::benchgen::{generate_instance, GeneratorParams, Preset};
use coref_adjudication_service::{router, AppState, ServiceConfig};

fn fixture(name: &str) -> String {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "core", "tests", "fixtures", name]
        .iter()
        .collect();
    std::fs::read_to_string(path).unwrap()
}

fn app() -> Router {
    router(AppState::new(ServiceConfig::default()).unwrap())
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn json_call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn sample_session(app: &Router) -> String {
    let files: Vec<Value> = ["a", "b", "c", "d"]
        .iter()
        .map(|id| json!({ "name": format!("{id}.conll"), "content": fixture(&format!("sample_{id}.conll")) }))
        .collect();
    let (status, body) = json_call(app, Method::POST, "/sessions", Some(json!({ "files": files }))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["annotators"], json!(["a", "b", "c", "d"]));
    assert_eq!(body["token_count"], 6);
    body["id"].as_str().unwrap().to_string()
}

fn span(s: usize, e: usize) -> Value {
    json!({ "start": s, "end": e })
}

fn example_six_actions() -> Value {
    json!([
        { "kind": "force_mention", "span": span(1, 3), "chain": "2" },
        { "kind": "force_mention", "span": span(6, 6), "chain": "2" },
    ])
}

#[tokio::test]
async fn health_answers() {
    let (status, body) = json_call(&app(), Method::GET, "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn objective_v_reports_both_optima() {
    let app = app();
    let id = sample_session(&app).await;
    let (status, body) = json_call(&app, Method::POST, &format!("/sessions/{id}/solve"), Some(json!({}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "optimal");
    assert_eq!(body["objective"], "V");
    assert_eq!(body["cost"]["total"], 12);
    let optima = body["optima"].as_array().unwrap();
    assert_eq!(optima.len(), 2);
    assert!(optima.iter().all(|o| o["cost"] == 12));
    assert_eq!(optima[0]["links"], json!([[span(1, 3), span(5, 5)]]));
    assert_eq!(optima[1]["links"], json!([[span(1, 3), span(6, 6)]]));
    let links = body["links"].as_array().unwrap();
    assert_eq!(links.len(), 5);
    assert!(links.iter().all(|l| l["omit"] == 2 * l["evidence"].as_u64().unwrap()));
}

#[tokio::test]
async fn example_six_enforcements_reproduce_the_reviewed_file() {
    let app = app();
    let id = sample_session(&app).await;
    let (status, body) = json_call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/enforcements"),
        Some(json!({ "actions": example_six_actions() })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["revision"], 1);
    assert_eq!(body["enforcements"]["locked_tokens"], json!([1, 6]));

    let (status, body) = json_call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/solve"),
        Some(json!({ "objective": "u" })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["revision"], 1);
    assert_eq!(body["cost"]["total"], 8);
    assert_eq!(
        body["chains"],
        json!([
            { "label": "2", "spans": [span(1, 3), span(6, 6)] },
            { "label": "1", "spans": [span(2, 2), span(4, 4)] },
        ])
    );
    assert_eq!(body["result"], json!(["=(2", "(1)", "2)", "(1)", "-", "=(2)"]));

    let (status, text) = call(&app, Method::GET, &format!("/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(String::from_utf8(text).unwrap(), fixture("review_resolved.conll"));
}

fn without_stats(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("stats");
    v
}

#[tokio::test]
async fn resolving_without_changes_is_idempotent() {
    let app = app();
    let id = sample_session(&app).await;
    let uri = format!("/sessions/{id}/solve");
    let req = json!({ "objective": "u", "actions": example_six_actions() });
    let (_, first) = json_call(&app, Method::POST, &uri, Some(req)).await;
    let (status, second) = json_call(&app, Method::POST, &uri, Some(json!({ "objective": "u" }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(without_stats(first), without_stats(second));

    let (_, status) = json_call(&app, Method::GET, &format!("/sessions/{id}/status"), None).await;
    assert_eq!(status["state"], "done");
    assert_eq!(status["revision"], 1);
    assert_eq!(status["cost"], 8);
}

#[tokio::test]
async fn unknown_session_is_not_found() {
    let app = app();
    for (method, path) in [
        (Method::GET, "/sessions/nope"),
        (Method::GET, "/sessions/nope/status"),
        (Method::GET, "/sessions/nope/export"),
    ] {
        let (status, body) = json_call(&app, method, path, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert_eq!(body["error"], "unknown_session");
    }
    let (status, _) = json_call(&app, Method::POST, "/sessions/nope/solve", Some(json!({}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn infeasible_enforcement_lists_the_constraints_and_keeps_the_result() {
    let app = app();
    let id = sample_session(&app).await;
    let uri = format!("/sessions/{id}/solve");
    let (status, before) = json_call(&app, Method::POST, &uri, Some(json!({ "objective": "u" }))).await;
    assert_eq!(status, StatusCode::OK);

    let actions = json!([{ "kind": "force_same", "first": span(1, 3), "second": span(1, 1) }]);
    let (status, body) = json_call(
        &app,
        Method::POST,
        &uri,
        Some(json!({ "objective": "u", "actions": actions })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    assert_eq!(body["error"], "infeasible");
    assert_eq!(body["revision"], 1);
    let constraints = body["witness"]["constraints"].as_array().unwrap();
    assert!(constraints.iter().any(|c| c["kind"] == "same_chain"));

    let (_, view) = json_call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(view["result_revision"], 0);
    assert_eq!(view["revision"], 1);
    assert_eq!(view["result"][1], before["result"][1]);
}

#[tokio::test]
async fn contradictory_actions_leave_the_session_alone() {
    let app = app();
    let id = sample_session(&app).await;
    let actions = json!([
        { "kind": "force_same", "first": span(1, 3), "second": span(5, 5) },
        { "kind": "force_different", "first": span(1, 3), "second": span(5, 5) },
    ]);
    let (status, body) = json_call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/enforcements"),
        Some(json!({ "actions": actions })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "invalid_enforcement");
    let (_, view) = json_call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(view["revision"], 0);
    assert_eq!(view["enforcements"]["chains"], json!([]));
}

#[tokio::test]
async fn session_view_lists_columns() {
    let app = app();
    let id = sample_session(&app).await;
    let (status, view) = json_call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["tokens"].as_array().unwrap().len(), 6);
    assert_eq!(view["columns"].as_array().unwrap().len(), 4);
    assert_eq!(view["columns"][1], json!(["(3", "-", "3)", "-", "(3)", "-"]));
    assert_eq!(view["result"], Value::Null);
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let app = app();
    let one = json!({ "files": [{ "name": "a.conll", "content": fixture("sample_a.conll") }] });
    let (status, body) = json_call(&app, Method::POST, "/sessions", Some(one)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "too_few_annotators");

    let broken = json!({ "files": [
        { "name": "a.conll", "content": fixture("sample_a.conll") },
        { "name": "b.conll", "content": "#begin document\n1 (1\n#end document\n" },
    ] });
    let (status, body) = json_call(&app, Method::POST, "/sessions", Some(broken)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["message"].as_str().unwrap().starts_with("b.conll"));

    let id = sample_session(&app).await;
    let (status, body) = json_call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/solve"),
        Some(json!({ "objective": "w" })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "bad_objective");
}

#[tokio::test]
async fn merged_upload_restores_enforcements() {
    let app = app();
    let (status, body) = json_call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({ "merged": fixture("review_pinned.conll") })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let id = body["id"].as_str().unwrap();
    let (_, view) = json_call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(view["enforcements"]["locked_tokens"], json!([1, 6]));
    let (status, body) = json_call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/solve"),
        Some(json!({ "objective": "u" })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let (_, text) = call(&app, Method::GET, &format!("/sessions/{id}/export"), None).await;
    assert_eq!(String::from_utf8(text).unwrap(), fixture("review_resolved.conll"));
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        persist_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    };
    let app = router(AppState::new(config.clone()).unwrap());
    let id = sample_session(&app).await;
    let req = json!({ "objective": "u", "actions": example_six_actions() });
    let (status, _) = json_call(&app, Method::POST, &format!("/sessions/{id}/solve"), Some(req)).await;
    assert_eq!(status, StatusCode::OK);
    let (_, before) = call(&app, Method::GET, &format!("/sessions/{id}/export"), None).await;

    let restarted = router(AppState::new(config).unwrap());
    let (status, after) = call(&restarted, Method::GET, &format!("/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(after, before);
    let (_, view) = json_call(&restarted, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(view["enforcements"]["locked_tokens"], json!([1, 6]));

    let (status, body) = json_call(
        &restarted,
        Method::POST,
        "/sessions",
        Some(json!({ "merged": fixture("review_pinned.conll") })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_ne!(body["id"].as_str().unwrap(), id);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn a_new_solve_cancels_the_running_one() {
    let app = app();
    let g = generate_instance(&GeneratorParams::preset(Preset::Ds1, 2)).unwrap();
    let files: Vec<Value> = g
        .files()
        .into_iter()
        .map(|(id, text)| json!({ "name": format!("{id}.conll"), "content": text }))
        .collect();
    let (status, body) = json_call(&app, Method::POST, "/sessions", Some(json!({ "files": files }))).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = body["id"].as_str().unwrap().to_string();
    let uri = format!("/sessions/{id}/solve");

    let started = Instant::now();
    let long = {
        let app = app.clone();
        let uri = uri.clone();
        tokio::spawn(async move {
            json_call(
                &app,
                Method::POST,
                &uri,
                Some(json!({ "objective": "u", "budget_s": 60.0, "enumerate": 0 })),
            )
            .await
        })
    };
    // wait until the first solve is running
    loop {
        let (_, s) = json_call(&app, Method::GET, &format!("/sessions/{id}/status"), None).await;
        if s["state"] == "running" {
            break;
        }
        assert!(started.elapsed() < Duration::from_secs(30));
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let (status, short) = json_call(
        &app,
        Method::POST,
        &uri,
        Some(json!({ "objective": "v", "budget_s": 5.0 })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{short}");
    assert_eq!(short["objective"], "V");
    let (status, body) = long.await.unwrap();
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "cancelled");
    assert!(started.elapsed() < Duration::from_secs(50));

    let (_, s) = json_call(&app, Method::GET, &format!("/sessions/{id}/status"), None).await;
    assert_eq!(s["state"], "done");
}
