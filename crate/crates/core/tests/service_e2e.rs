mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, Response, StatusCode};
use common::{brevity_only, words};
use grounded_observer::client::{ChatMessage, ChatModel, FnChat};
use grounded_observer::engine::FixedClock;
use grounded_observer::service::{
    ChatCompletionRequest, Service, ServiceOptions, SESSION_HEADER, TRACE_HEADER,
};
use grounded_observer::{Engine, EngineConfig, EvaluationRecord};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

fn verbose_until_forced() -> Arc<FnChat> {
    Arc::new(FnChat::new(|msgs, _| {
        let last = &msgs.last().unwrap().content;
        Ok(if last.starts_with("Your previous reply was rejected") {
            words(20)
        } else {
            words(60)
        })
    }))
}

fn engine(base: Arc<dyn ChatModel>) -> Engine {
    Engine::new(EngineConfig::default(), brevity_only(40.0, 1.0), base).with_clock(Arc::new(FixedClock::default()))
}

fn open(dir: &TempDir, base: Arc<dyn ChatModel>) -> Service {
    Service::open(engine(base), ServiceOptions::new(dir.path())).unwrap()
}

fn chat_body(text: &str) -> Body {
    Body::from(
        json!({"model": "observer", "messages": [{"role": "user", "content": text}]}).to_string(),
    )
}

async fn send(svc: &Service, req: Request<Body>) -> Response<Body> {
    svc.router().oneshot(req).await.unwrap()
}

async fn chat(svc: &Service, session: Option<&str>, text: &str) -> Response<Body> {
    let mut b = Request::post("/v1/chat/completions").header("content-type", "application/json");
    if let Some(s) = session {
        b = b.header(SESSION_HEADER, s);
    }
    send(svc, b.body(chat_body(text)).unwrap()).await
}

async fn json_of(resp: Response<Body>) -> Value {
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    serde_json::from_slice(&bytes).unwrap()
}

async fn trace(svc: &Service, id: &str, query: &str) -> Vec<EvaluationRecord> {
    let resp = send(svc, Request::get(format!("/v1/sessions/{id}/trace{query}")).body(Body::empty()).unwrap()).await;
    assert_eq!(resp.status(), StatusCode::OK);
    serde_json::from_value(json_of(resp).await).unwrap()
}

async fn patch(svc: &Service, body: Value) -> Response<Body> {
    send(
        svc,
        Request::patch("/v1/config")
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap(),
    )
    .await
}

/// Reads SSE frames until `want` events have arrived or a second passes.
async fn sse_ids(resp: Response<Body>, want: usize) -> Vec<(u64, String)> {
    let mut body = resp.into_body();
    let mut text = String::new();
    let mut out = Vec::new();
    while out.len() < want {
        let Ok(Some(Ok(frame))) = tokio::time::timeout(Duration::from_secs(1), body.frame()).await else {
            break;
        };
        if let Ok(data) = frame.into_data() {
            text.push_str(std::str::from_utf8(&data).unwrap());
        }
        out.clear();
        for block in text.split("\n\n").filter(|b| b.contains("id:")) {
            let field = |k: &str| {
                block
                    .lines()
                    .find_map(|l| l.strip_prefix(k))
                    .map(|v| v.trim().to_string())
                    .unwrap_or_default()
            };
            out.push((field("id:").parse().unwrap(), field("event:")));
        }
    }
    out
}

#[tokio::test]
async fn new_session_then_unknown_session() {
    let dir = TempDir::new().unwrap();
    let svc = open(&dir, verbose_until_forced());
    let resp = chat(&svc, None, "hello").await;
    assert_eq!(resp.status(), StatusCode::OK);
    let sid = resp.headers()[SESSION_HEADER].to_str().unwrap().to_string();
    assert_eq!(sid, "s000001");
    assert_eq!(resp.headers()[TRACE_HEADER], "s000001:0");
    let body = json_of(resp).await;
    assert_eq!(body["choices"][0]["message"]["content"], words(20));
    assert_eq!(body["usage"]["completion_tokens"], 20);

    let missing = chat(&svc, Some("s999999"), "hi").await;
    assert_eq!(missing.status(), StatusCode::NOT_FOUND);
    assert_eq!(json_of(missing).await["error"]["type"], "not_found");
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let dir = TempDir::new().unwrap();
    let svc = open(&dir, verbose_until_forced());
    for body in [
        json!({"model": "m", "messages": []}),
        json!({"model": "m", "messages": [{"role": "assistant", "content": "x"}]}),
        json!({"model": "m", "messages": [{"role": "user", "content": "x"}], "stream": true}),
        json!({"messages": [{"role": "user", "content": "x"}]}),
    ] {
        let resp = send(
            &svc,
            Request::post("/v1/chat/completions").body(Body::from(body.to_string())).unwrap(),
        )
        .await;
        assert_eq!(resp.status(), StatusCode::BAD_REQUEST, "{body}");
    }
    assert!(svc.session_ids().is_empty());
}

#[tokio::test]
async fn forced_regeneration_is_traced_and_paginated() {
    let dir = TempDir::new().unwrap();
    let svc = open(&dir, verbose_until_forced());
    let sid = chat(&svc, None, "hello").await.headers()[SESSION_HEADER].to_str().unwrap().to_string();
    chat(&svc, Some(&sid), "and then?").await;
    let all = trace(&svc, &sid, "").await;
    assert_eq!(all.len(), 2);
    for r in &all {
        assert_eq!(r.forced_count, 1);
        assert_eq!(r.candidates.len(), 2);
    }
    let one = trace(&svc, &sid, "?from=1&to=1").await;
    assert_eq!(one, vec![all[1].clone()]);
    assert!(trace(&svc, &sid, "?from=5").await.is_empty());
}

#[tokio::test]
async fn patched_budget_applies_to_the_next_turn() {
    let dir = TempDir::new().unwrap();
    let always_verbose: Arc<dyn ChatModel> = Arc::new(FnChat::new(|_, _| Ok(words(60))));
    let svc = open(&dir, always_verbose);
    let resp = patch(&svc, json!({"max_regenerations": 2})).await;
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(json_of(resp).await["config"]["max_regenerations"], 2);
    let sid = chat(&svc, None, "hello").await.headers()[SESSION_HEADER].to_str().unwrap().to_string();
    let t = trace(&svc, &sid, "").await;
    assert_eq!(t[0].candidates.len(), 3);
    assert!(t[0].budget_exhausted());
}

#[tokio::test]
async fn invalid_patch_changes_nothing() {
    let dir = TempDir::new().unwrap();
    let svc = open(&dir, verbose_until_forced());
    let before = svc.effective_config();
    let resp = patch(&svc, json!({"rules": {"brevity": {"rigidity": 1.5}}})).await;
    assert_eq!(resp.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let resp = patch(&svc, json!({"forced_feedback_probability": -1})).await;
    assert_eq!(resp.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(svc.effective_config(), before);
}

#[tokio::test]
async fn rule_patch_and_empty_patch_events() {
    let dir = TempDir::new().unwrap();
    let svc = open(&dir, verbose_until_forced());
    let sid = chat(&svc, None, "hello").await.headers()[SESSION_HEADER].to_str().unwrap().to_string();
    let empty = send(&svc, Request::patch("/v1/config").body(Body::empty()).unwrap()).await;
    assert_eq!(empty.status(), StatusCode::OK);
    let resp = patch(&svc, json!({"rules": {"brevity": {"threshold": 80}}})).await;
    assert_eq!(resp.status(), StatusCode::OK);
    let sse = send(&svc, Request::get(format!("/v1/sessions/{sid}/events")).body(Body::empty()).unwrap()).await;
    assert_eq!(sse.status(), StatusCode::OK);
    let events = sse_ids(sse, 3).await;
    assert_eq!(events, vec![(0, "record".to_string()), (1, "config".to_string())]);
    chat(&svc, Some(&sid), "short now?").await;
    let t = trace(&svc, &sid, "").await;
    assert_eq!(t[1].candidates.len(), 1);
}

#[tokio::test]
async fn sse_resumes_after_last_event_id() {
    let dir = TempDir::new().unwrap();
    let svc = open(&dir, verbose_until_forced());
    let sid = chat(&svc, None, "one").await.headers()[SESSION_HEADER].to_str().unwrap().to_string();
    chat(&svc, Some(&sid), "two").await;
    chat(&svc, Some(&sid), "three").await;
    let resp = send(
        &svc,
        Request::get(format!("/v1/sessions/{sid}/events"))
            .header("last-event-id", "1")
            .body(Body::empty())
            .unwrap(),
    )
    .await;
    assert_eq!(sse_ids(resp, 1).await, vec![(2, "record".to_string())]);

    let live = send(&svc, Request::get(format!("/v1/sessions/{sid}/events")).header("last-event-id", "2").body(Body::empty()).unwrap()).await;
    let svc2 = svc.clone();
    let sid2 = sid.clone();
    tokio::spawn(async move {
        tokio::time::sleep(Duration::from_millis(50)).await;
        chat(&svc2, Some(&sid2), "four").await;
    });
    assert_eq!(sse_ids(live, 1).await, vec![(3, "record".to_string())]);

    let missing = send(&svc, Request::get("/v1/sessions/nope/events").body(Body::empty()).unwrap()).await;
    assert_eq!(missing.status(), StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn overload_returns_429() {
    let dir = TempDir::new().unwrap();
    let slow: Arc<dyn ChatModel> = Arc::new(FnChat::new(|_, _| {
        std::thread::sleep(Duration::from_millis(400));
        Ok("fine".into())
    }));
    let mut opts = ServiceOptions::new(dir.path());
    opts.max_concurrent = 1;
    let svc = Service::open(engine(slow), opts).unwrap();
    let req = || ChatCompletionRequest {
        model: "m".into(),
        messages: vec![ChatMessage::user("hi")],
        temperature: None,
        max_tokens: None,
    };
    let first = {
        let svc = svc.clone();
        tokio::spawn(async move { svc.run_turn(None, req()).await })
    };
    tokio::time::sleep(Duration::from_millis(100)).await;
    let second = svc.run_turn(None, req()).await.unwrap_err();
    assert_eq!(second.status, 429);
    assert!(first.await.unwrap().is_ok());
    assert!(svc.run_turn(None, req()).await.is_ok());
}

#[tokio::test]
async fn bearer_token_guards_everything_but_health() {
    let dir = TempDir::new().unwrap();
    let mut opts = ServiceOptions::new(dir.path());
    opts.auth_token = Some("letmein".into());
    let svc = Service::open(engine(verbose_until_forced()), opts).unwrap();
    assert_eq!(chat(&svc, None, "hi").await.status(), StatusCode::UNAUTHORIZED);
    let health = send(&svc, Request::get("/healthz").body(Body::empty()).unwrap()).await;
    assert_eq!(health.status(), StatusCode::OK);
    let ok = send(
        &svc,
        Request::post("/v1/chat/completions")
            .header("authorization", "Bearer letmein")
            .body(chat_body("hi"))
            .unwrap(),
    )
    .await;
    assert_eq!(ok.status(), StatusCode::OK);
}

#[tokio::test]
async fn upstream_failure_is_502_and_persisted() {
    let dir = TempDir::new().unwrap();
    let failing: Arc<dyn ChatModel> = Arc::new(FnChat::new(|_, n| {
        if n == 0 {
            Ok("Hello!".into())
        } else {
            Err(grounded_observer::client::ClientError::Status(500))
        }
    }));
    let svc = open(&dir, failing.clone());
    let sid = chat(&svc, None, "hi").await.headers()[SESSION_HEADER].to_str().unwrap().to_string();
    let resp = chat(&svc, Some(&sid), "again").await;
    assert_eq!(resp.status(), StatusCode::BAD_GATEWAY);
    assert_eq!(resp.headers()[SESSION_HEADER], sid.as_str());
    let turns = svc.session(&sid).await.unwrap().conversation.turns.len();
    drop(svc);
    let again = open(&dir, failing);
    let s = again.session(&sid).await.unwrap();
    assert_eq!(s.conversation.turns.len(), turns);
    assert!(s.conversation.turns.last().unwrap().placeholder);
    assert_eq!(s.records.len(), 1);
}

#[tokio::test]
async fn reopened_store_replays_sessions_and_config() {
    let dir = TempDir::new().unwrap();
    let svc = open(&dir, verbose_until_forced());
    let sid = chat(&svc, None, "hello").await.headers()[SESSION_HEADER].to_str().unwrap().to_string();
    chat(&svc, Some(&sid), "more").await;
    patch(&svc, json!({"max_regenerations": 1})).await;
    let before = trace(&svc, &sid, "").await;
    let state = svc.session(&sid).await.unwrap();
    let config = svc.effective_config();
    drop(svc);

    let again = open(&dir, verbose_until_forced());
    assert_eq!(trace(&again, &sid, "").await, before);
    let replayed = again.session(&sid).await.unwrap();
    assert_eq!(replayed.rng, state.rng);
    assert_eq!(replayed.conversation, state.conversation);
    assert_eq!(again.effective_config(), config);
    let next = chat(&again, None, "new").await;
    assert_eq!(next.headers()[SESSION_HEADER], "s000002");
}
