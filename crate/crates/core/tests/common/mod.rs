#![allow(dead_code)]

use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode, Uri};
use axum::response::IntoResponse;
use axum::{Json, Router};
use serde_json::{json, Value};

use grounded_observer::config::{Comparator, Threshold};
use grounded_observer::{Feature, OverlayRule, RuleSet};

pub fn words(n: usize) -> String {
    (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
}

pub fn rule(id: &str, feature: Feature, comparator: Comparator, threshold: Threshold, rigidity: f64) -> OverlayRule {
    OverlayRule {
        id: id.into(),
        feature,
        comparator,
        threshold,
        rigidity,
        urgent_threshold: 0.8,
        descriptor_template: "{feature} is {value} against {threshold}".into(),
        priority: 1,
    }
}

pub fn brevity_only(limit: f64, rigidity: f64) -> RuleSet {
    RuleSet::new(vec![rule(
        "brevity",
        Feature::Brevity,
        Comparator::AtMost,
        Threshold::Value(limit),
        rigidity,
    )])
    .unwrap()
}

/// One request as the stub upstream saw it.
#[derive(Debug, Clone)]
pub struct Seen {
    pub path: String,
    pub authorization: Option<String>,
    pub body: Value,
}

type Responder = dyn Fn(&Value, usize) -> (u16, Value) + Send + Sync;

#[derive(Clone)]
struct StubState {
    seen: Arc<Mutex<Vec<Seen>>>,
    respond: Arc<Responder>,
}

/// An upstream on 127.0.0.1 that records every request and answers with
/// `respond(body, call_number)`.
pub struct Stub {
    pub url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

impl Stub {
    pub fn start<F>(respond: F) -> Stub
    where
        F: Fn(&Value, usize) -> (u16, Value) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.set_nonblocking(true).unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let state = StubState {
            seen: seen.clone(),
            respond: Arc::new(respond),
        };
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).unwrap();
                let app = Router::new().fallback(handle).with_state(state);
                axum::serve(listener, app).await.unwrap();
            });
        });
        Stub { url, seen }
    }

    /// Replies with `text` as an OpenAI-style completion every time.
    pub fn echo(text: &str) -> Stub {
        let text = text.to_string();
        Stub::start(move |_, _| (200, completion(&text)))
    }

    pub fn seen(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

async fn handle(State(s): State<StubState>, uri: Uri, headers: HeaderMap, body: Bytes) -> impl IntoResponse {
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let n = {
        let mut seen = s.seen.lock().unwrap();
        seen.push(Seen {
            path: uri.path().to_string(),
            authorization: headers
                .get("authorization")
                .and_then(|v| v.to_str().ok())
                .map(str::to_string),
            body: body.clone(),
        });
        seen.len() - 1
    };
    let (status, reply) = (s.respond)(&body, n);
    (StatusCode::from_u16(status).unwrap(), Json(reply))
}

pub fn completion(text: &str) -> Value {
    json!({
        "id": "cmpl-stub",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
    })
}
