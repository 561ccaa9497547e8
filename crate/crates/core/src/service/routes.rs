use std::convert::Infallible;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast;

use super::{ApiError, ChatCompletionRequest, Event, Service, SESSION_HEADER, TRACE_HEADER};

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let kind = match self.status {
            400 => "invalid_request",
            401 => "unauthorized",
            404 => "not_found",
            422 => "invalid_config",
            429 => "rate_limited",
            502 => "upstream_error",
            _ => "internal_error",
        };
        let mut resp = (status, Json(json!({"error": {"message": self.message, "type": kind}}))).into_response();
        if let Some(id) = self.session.and_then(|s| HeaderValue::from_str(&s).ok()) {
            resp.headers_mut().insert(SESSION_HEADER, id);
        }
        resp
    }
}

pub fn router(service: Service) -> Router {
    let api = Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/sessions/{id}/trace", get(trace))
        .route("/v1/sessions/{id}/events", get(events))
        .route("/v1/config", patch(patch_config))
        .route_layer(middleware::from_fn_with_state(service.clone(), auth));
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .merge(api)
        .with_state(service)
}

async fn auth(State(svc): State<Service>, req: Request, next: Next) -> Response {
    if let Some(token) = &svc.options().auth_token {
        let ok = req
            .headers()
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::new(401, "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

async fn chat(State(svc): State<Service>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let req: ChatCompletionRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(400, format!("request does not match the schema: {e}")))?;
    let session = match headers.get(SESSION_HEADER) {
        Some(v) => Some(
            v.to_str()
                .map_err(|_| ApiError::new(400, "session header is not valid text"))?
                .to_string(),
        ),
        None => None,
    };
    let reply = svc.run_turn(session.as_deref(), req).await?;
    let mut resp = Json(&reply.response).into_response();
    let h = resp.headers_mut();
    h.insert(SESSION_HEADER, HeaderValue::from_str(&reply.session).expect("ids are ascii"));
    h.insert(TRACE_HEADER, HeaderValue::from_str(&reply.trace_id()).expect("ids are ascii"));
    Ok(resp)
}

#[derive(Deserialize)]
struct Range {
    from: Option<usize>,
    to: Option<usize>,
}

async fn trace(
    State(svc): State<Service>,
    Path(id): Path<String>,
    Query(range): Query<Range>,
) -> Result<Response, ApiError> {
    let records = svc.trace(&id, range.from, range.to).await?;
    Ok(Json(records).into_response())
}

async fn patch_config(State(svc): State<Service>, body: Bytes) -> Result<Response, ApiError> {
    let patch: Value = if body.is_empty() {
        json!({})
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::new(400, format!("patch is not JSON: {e}")))?
    };
    Ok(Json(svc.patch_config(&patch)?).into_response())
}

fn to_sse(e: &Event) -> SseEvent {
    SseEvent::default()
        .id(e.id.to_string())
        .event(e.kind.as_str())
        .data(&*e.data)
}

/// Backlog first, then live events newer than the backlog. A lagging
/// subscriber's stream ends; it reconnects with `Last-Event-ID`.
fn event_stream(
    backlog: Vec<Event>,
    rx: broadcast::Receiver<Event>,
    after: Option<u64>,
) -> impl Stream<Item = Result<SseEvent, Infallible>> {
    let last_sent = backlog.last().map(|e| e.id).or(after);
    let head = stream::iter(backlog.iter().map(to_sse).map(Ok).collect::<Vec<_>>());
    let tail = stream::unfold((rx, last_sent), |(mut rx, last)| async move {
        loop {
            match rx.recv().await {
                Ok(e) if last.is_some_and(|l| e.id <= l) => continue,
                Ok(e) => {
                    let id = e.id;
                    return Some((Ok(to_sse(&e)), (rx, Some(id))));
                }
                Err(_) => return None,
            }
        }
    });
    head.chain(tail)
}

async fn events(
    State(svc): State<Service>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let after = match headers.get("last-event-id") {
        Some(v) => Some(
            v.to_str()
                .ok()
                .and_then(|s| s.trim().parse::<u64>().ok())
                .ok_or_else(|| ApiError::new(400, "Last-Event-ID must be a non-negative integer"))?,
        ),
        None => None,
    };
    let (backlog, rx) = svc
        .subscribe(&id, after)
        .ok_or_else(|| ApiError::new(404, format!("unknown session `{id}`")))?;
    Ok(Sse::new(event_stream(backlog, rx, after))
        .keep_alive(KeepAlive::default())
        .into_response())
}
