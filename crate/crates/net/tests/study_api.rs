use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use lexdrift_core::study::{read_records, SteppingClock, StudyConfig, StudyEngine};
use lexdrift_core::synth;
use lexdrift_net::{router, AppState};

fn app(token: Option<&str>) -> axum::Router {
    let engine = StudyEngine::new(
        StudyConfig::new(synth::toy_pairs(20), 42),
        Box::new(std::io::sink()),
        Box::new(SteppingClock::new(0, 1)),
    )
    .unwrap();
    router(
        AppState {
            engine: Arc::new(engine),
            admin_token: token.map(str::to_string),
        },
        None,
    )
}

async fn call(
    app: &axum::Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
    auth: Option<&str>,
) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = auth {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

#[tokio::test]
async fn full_session_over_http() {
    let app = app(Some("secret"));
    let (status, body) = call(
        &app,
        "POST",
        "/api/sessions",
        Some(json!({"participant_id": "p1"})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    let created = json_of(&body);
    let id = created["session_id"].as_str().unwrap().to_string();
    assert_eq!(created["total_trials"], 25);

    let (status, _) = call(
        &app,
        "POST",
        "/api/sessions",
        Some(json!({"participant_id": "p1"})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);

    for i in 1..=25 {
        let (status, body) = call(&app, "GET", &format!("/api/sessions/{id}/trial"), None, None).await;
        assert_eq!(status, StatusCode::OK);
        let trial = json_of(&body);
        assert_eq!(trial["status"], "trial");
        assert_eq!(trial["trial_index"], i);
        let (status, body) = call(
            &app,
            "POST",
            &format!("/api/sessions/{id}/responses"),
            Some(json!({"trial_index": i, "choice_side": "left", "rt_ms": 30000.0})),
            None,
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(json_of(&body), json!({"accepted": true, "too_fast": false}));
    }
    let (_, body) = call(&app, "GET", &format!("/api/sessions/{id}/trial"), None, None).await;
    assert_eq!(json_of(&body)["status"], "finished");

    let (status, body) = call(&app, "GET", "/api/admin/export", None, Some("secret")).await;
    assert_eq!(status, StatusCode::OK);
    let records = read_records(body.as_slice()).unwrap();
    assert_eq!(records.len(), 25);
    assert!(records.iter().all(|r| r.session_id == id));
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let app = app(Some("secret"));
    let (status, _) = call(&app, "GET", "/api/sessions/nope/trial", None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, body) = call(
        &app,
        "POST",
        "/api/sessions",
        Some(json!({"participant_id": "p"})),
        None,
    )
    .await;
    let id = json_of(&body)["session_id"].as_str().unwrap().to_string();
    let uri = format!("/api/sessions/{id}/responses");

    let (status, body) = call(
        &app,
        "POST",
        &uri,
        Some(json!({"trial_index": 3, "choice_side": "left", "rt_ms": 10.0})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(json_of(&body)["error"], "sequencing");

    let (status, body) = call(
        &app,
        "POST",
        &uri,
        Some(json!({"trial_index": 1, "choice_side": "right", "rt_ms": 10.0})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json_of(&body)["too_fast"], true);

    let (status, body) = call(
        &app,
        "POST",
        &uri,
        Some(json!({"trial_index": 1, "choice_side": "left", "rt_ms": 10.0})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(json_of(&body)["error"], "conflict");

    let (status, _) = call(
        &app,
        "POST",
        &uri,
        Some(json!({"trial_index": 2, "choice_side": "left", "rt_ms": -1.0})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _) = call(
        &app,
        "POST",
        "/api/sessions",
        Some(json!({"participant_id": " "})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn export_is_auth_gated() {
    let app = app(Some("secret"));
    assert_eq!(
        call(&app, "GET", "/api/admin/export", None, None).await.0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        call(&app, "GET", "/api/admin/export", None, Some("wrong")).await.0,
        StatusCode::UNAUTHORIZED
    );
    let open = self::app(None);
    assert_eq!(
        call(&open, "GET", "/api/admin/export", None, Some("secret")).await.0,
        StatusCode::FORBIDDEN
    );
    let (status, body) = call(&app, "GET", "/healthz", None, None).await;
    assert_eq!((status, body.as_slice()), (StatusCode::OK, b"ok".as_slice()));
}

#[tokio::test]
async fn trial_payloads_share_one_shape() {
    let app = app(None);
    let (_, body) = call(
        &app,
        "POST",
        "/api/sessions",
        Some(json!({"participant_id": "p"})),
        None,
    )
    .await;
    let id = json_of(&body)["session_id"].as_str().unwrap().to_string();
    let mut shapes = std::collections::BTreeSet::new();
    for i in 1..=25 {
        let (_, body) = call(&app, "GET", &format!("/api/sessions/{id}/trial"), None, None).await;
        let v = json_of(&body);
        shapes.insert(v.as_object().unwrap().keys().cloned().collect::<Vec<_>>());
        call(
            &app,
            "POST",
            &format!("/api/sessions/{id}/responses"),
            Some(json!({"trial_index": i, "choice_side": "left", "rt_ms": 9000.0})),
            None,
        )
        .await;
    }
    assert_eq!(shapes.len(), 1);
}
