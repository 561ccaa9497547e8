//! HTTP proxy around the engine: chat-completions in, gated replies out,
//! with per-session traces, live config patches and an event stream.
//!
//! Every turn is appended to the store and synced before the HTTP response
//! is written, so a restart replays exactly the turns clients were told
//! about (and possibly one they were not).
//!
//! # Wire schema
//!
//! `POST /v1/chat/completions` takes exactly these keys; any other key is a
//! 400:
//!
//! ```text
//! {"model": string,
//!  "messages": [{"role": "system"|"user"|"assistant", "content": string}, ...],
//!  "temperature"?: number >= 0,
//!  "max_tokens"?: integer >= 1}
//! ```
//!
//! The last message must be a non-empty `user` message; it is the human
//! turn. Earlier messages are ignored because the session keeps its own
//! history. The reply is exactly:
//!
//! ```text
//! {"id": "chatcmpl-<session>-<ordinal>",
//!  "choices": [{"index": 0, "message": {"role": "assistant", "content": string}}],
//!  "usage": {"completion_tokens": integer}}
//! ```
//!
//! with headers `x-observer-session` and `x-observer-trace`
//! (`<session>:<ordinal>`). Requests without a session header open a new
//! session. Errors are `{"error": {"message": string, "type": string}}`
//! with status 400, 401, 404, 429, 502 or 500.
//!
//! Upstream, the engine sends `{"model", "messages", "temperature"?,
//! "max_tokens"?}` to `<endpoint>/v1/chat/completions` and reads
//! `choices[0].message.content`.

mod events;
mod routes;
pub mod store;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::client::{ChatMessage, ChatParams, Role};
use crate::config::{ConfigError, EngineConfig, OverlayRule, RuleSet};
use crate::engine::{Engine, EngineError, EvaluationRecord, SessionState};

pub use events::{Event, EventKind};
pub use routes::router;
use store::{Store, StoreEntry};

pub const SESSION_HEADER: &str = "x-observer-session";
pub const TRACE_HEADER: &str = "x-observer-trace";
/// Names the environment variable holding the upstream credential.
pub const API_KEY_VAR_ENV: &str = "OBSERVER_API_KEY_VAR";

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub store_dir: PathBuf,
    /// Turns allowed in flight at once; further requests get 429.
    pub max_concurrent: usize,
    /// When set, every endpoint except `/healthz` requires this bearer token.
    pub auth_token: Option<String>,
}

impl ServiceOptions {
    pub fn new(store_dir: impl Into<PathBuf>) -> Self {
        Self {
            store_dir: store_dir.into(),
            max_concurrent: 64,
            auth_token: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("store: {0}")]
    Store(#[from] std::io::Error),
    #[error("persisted configuration is invalid: {0}")]
    Config(#[from] ConfigError),
}

/// Chat-completions request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatCompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Choice {
    pub index: u32,
    pub message: ChatMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Usage {
    pub completion_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatCompletionResponse {
    pub id: String,
    pub choices: Vec<Choice>,
    pub usage: Usage,
}

/// A status code plus a client-safe message.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{status}: {message}")]
pub struct ApiError {
    pub status: u16,
    pub message: String,
    /// Session the failure belongs to, when one was resolved.
    pub session: Option<String>,
}

impl ApiError {
    pub fn new(status: u16, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            session: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnReply {
    pub session: String,
    /// 0-based position of the record in the session trace.
    pub ordinal: usize,
    pub response: ChatCompletionResponse,
}

impl TurnReply {
    pub fn trace_id(&self) -> String {
        format!("{}:{}", self.session, self.ordinal)
    }
}

/// The effective configuration returned by `PATCH /v1/config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveConfig {
    pub config: EngineConfig,
    pub rules: Vec<OverlayRule>,
}

type SessionSlot = Arc<tokio::sync::Mutex<SessionState>>;

pub(crate) struct AppState {
    engine: RwLock<Engine>,
    sessions: Mutex<BTreeMap<String, SessionSlot>>,
    next_session: AtomicU64,
    store: Store,
    hub: events::EventHub,
    permits: Arc<Semaphore>,
    /// Serializes config patches so persisted order equals applied order.
    config_lock: Mutex<()>,
    opts: ServiceOptions,
}

/// Cloneable handle on a running service.
#[derive(Clone)]
pub struct Service {
    state: Arc<AppState>,
}

fn record_json(r: &EvaluationRecord) -> String {
    serde_json::to_string(r).expect("records serialize")
}

fn config_json(e: &EffectiveConfig) -> String {
    serde_json::to_string(e).expect("config serializes")
}

fn validate_request(req: &ChatCompletionRequest) -> Result<String, ApiError> {
    let last = req
        .messages
        .last()
        .ok_or_else(|| ApiError::new(400, "`messages` must not be empty"))?;
    if last.role != Role::User {
        return Err(ApiError::new(400, "the last message must have role `user`"));
    }
    if last.content.trim().is_empty() {
        return Err(ApiError::new(400, "the last user message is empty"));
    }
    if let Some(t) = req.temperature {
        if !t.is_finite() || t < 0.0 {
            return Err(ApiError::new(400, "`temperature` must be a non-negative number"));
        }
    }
    if req.max_tokens == Some(0) {
        return Err(ApiError::new(400, "`max_tokens` must be at least 1"));
    }
    Ok(last.content.clone())
}

impl Service {
    /// Opens the store and rebuilds every session from it.
    pub fn open(engine: Engine, opts: ServiceOptions) -> Result<Self, ServiceError> {
        let (store, entries) = Store::open(&opts.store_dir)?;
        let hub = events::EventHub::default();
        let mut engine = engine;
        let mut sessions: BTreeMap<String, SessionState> = BTreeMap::new();
        for entry in entries {
            match entry {
                StoreEntry::Session { id, seed, created } => {
                    hub.register(&id);
                    sessions.insert(id.clone(), SessionState::new(id, seed, created));
                }
                StoreEntry::Turn {
                    session,
                    human,
                    human_at,
                    agent_at,
                    rng,
                    record,
                    ..
                } => {
                    let Some(s) = sessions.get_mut(&session) else {
                        tracing::warn!(%session, "turn for unknown session skipped during replay");
                        continue;
                    };
                    s.apply(&human, record.as_ref(), human_at, agent_at);
                    s.rng = rng;
                    if let Some(r) = &record {
                        hub.publish(&session, EventKind::Record, record_json(r));
                    }
                }
                StoreEntry::Config { config, rules, .. } => {
                    config.validate()?;
                    let rules = RuleSet::new(rules)?;
                    let eff = EffectiveConfig {
                        config: config.clone(),
                        rules: rules.rules().to_vec(),
                    };
                    hub.publish_all(EventKind::Config, config_json(&eff));
                    engine = engine.reconfigured(config, rules);
                }
            }
        }
        let next = sessions.len() as u64 + 1;
        let state = AppState {
            engine: RwLock::new(engine),
            sessions: Mutex::new(
                sessions
                    .into_iter()
                    .map(|(k, v)| (k, Arc::new(tokio::sync::Mutex::new(v))))
                    .collect(),
            ),
            next_session: AtomicU64::new(next),
            store,
            hub,
            permits: Arc::new(Semaphore::new(opts.max_concurrent.max(1))),
            config_lock: Mutex::new(()),
            opts,
        };
        Ok(Self {
            state: Arc::new(state),
        })
    }

    pub fn router(&self) -> axum::Router {
        router(self.clone())
    }

    pub fn options(&self) -> &ServiceOptions {
        &self.state.opts
    }

    pub fn engine(&self) -> Engine {
        self.state.engine.read().unwrap().clone()
    }

    pub fn effective_config(&self) -> EffectiveConfig {
        let e = self.engine();
        EffectiveConfig {
            config: e.config().clone(),
            rules: e.rules().rules().to_vec(),
        }
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.state.sessions.lock().unwrap().keys().cloned().collect()
    }

    /// Snapshot of a session's state.
    pub async fn session(&self, id: &str) -> Option<SessionState> {
        let slot = self.state.sessions.lock().unwrap().get(id).cloned()?;
        let guard = slot.lock().await;
        Some(guard.clone())
    }

    fn create_session(&self) -> Result<(String, SessionSlot), ApiError> {
        let n = self.state.next_session.fetch_add(1, Ordering::SeqCst);
        let id = format!("s{n:06}");
        let engine = self.engine();
        let now = engine.clock().now();
        let seed = engine.config().rng_seed.wrapping_add(n);
        self.state
            .store
            .append(&StoreEntry::Session { id: id.clone(), seed, created: now }, now)
            .map_err(|e| ApiError::new(500, format!("store write failed: {e}")))?;
        let slot = Arc::new(tokio::sync::Mutex::new(SessionState::new(id.clone(), seed, now)));
        self.state.sessions.lock().unwrap().insert(id.clone(), slot.clone());
        self.state.hub.register(&id);
        Ok((id, slot))
    }

    /// Runs one gated turn. The record is durable before this returns.
    pub async fn run_turn(
        &self,
        session: Option<&str>,
        req: ChatCompletionRequest,
    ) -> Result<TurnReply, ApiError> {
        let human = validate_request(&req)?;
        let _permit = self
            .state
            .permits
            .clone()
            .try_acquire_owned()
            .map_err(|_| ApiError::new(429, "too many concurrent sessions"))?;
        let (id, slot) = match session {
            Some(id) => {
                let slot = self.state.sessions.lock().unwrap().get(id).cloned();
                (id.to_string(), slot.ok_or_else(|| ApiError::new(404, format!("unknown session `{id}`")))?)
            }
            None => self.create_session()?,
        };
        let mut guard = slot.lock_owned().await;
        let engine = self.engine().with_params(ChatParams {
            temperature: req.temperature,
            max_tokens: req.max_tokens,
        });
        let state = self.state.clone();
        let sid = id.clone();
        let joined = tokio::task::spawn_blocking(move || {
            let s = &mut *guard;
            let human_at = engine.clock().now();
            let result = s.step(&engine, &human).cloned();
            let agent_at = s.conversation.last().and_then(|t| t.timestamp).unwrap_or(human_at);
            let (record, error, partial) = match &result {
                Ok(r) => (Some(r.clone()), None, None),
                Err(e) => (None, Some(e.to_string()), Some((*e.partial).clone())),
            };
            let entry = StoreEntry::Turn {
                session: sid.clone(),
                human,
                human_at,
                agent_at,
                rng: s.rng,
                record,
                error,
                partial,
            };
            state.store.append(&entry, agent_at)?;
            if let Ok(r) = &result {
                state.hub.publish(&sid, EventKind::Record, record_json(r));
            }
            Ok::<_, std::io::Error>((result, s.records.len()))
        })
        .await
        .map_err(|e| ApiError::new(500, format!("turn task failed: {e}")))?;
        let with_session = |mut e: ApiError| {
            e.session = Some(id.clone());
            e
        };
        let (result, n_records) =
            joined.map_err(|e| with_session(ApiError::new(500, format!("store write failed: {e}"))))?;
        match result {
            Ok(record) => {
                let ordinal = n_records - 1;
                let response = ChatCompletionResponse {
                    id: format!("chatcmpl-{id}-{ordinal}"),
                    choices: vec![Choice {
                        index: 0,
                        message: ChatMessage::assistant(record.accepted_text.clone()),
                    }],
                    usage: Usage {
                        completion_tokens: record
                            .accepted_index
                            .map_or(0, |i| record.candidates[i].features.brevity_tokens),
                    },
                };
                Ok(TurnReply { session: id, ordinal, response })
            }
            Err(e) => {
                let status = match e.error {
                    EngineError::Upstream(_) => 502,
                    _ => 500,
                };
                Err(with_session(ApiError::new(status, e.error.to_string())))
            }
        }
    }

    /// Records `from..=to` (0-based, clipped to the trace length).
    pub async fn trace(
        &self,
        id: &str,
        from: Option<usize>,
        to: Option<usize>,
    ) -> Result<Vec<EvaluationRecord>, ApiError> {
        let s = self
            .session(id)
            .await
            .ok_or_else(|| ApiError::new(404, format!("unknown session `{id}`")))?;
        let len = s.records.len();
        let from = from.unwrap_or(0);
        let to = to.unwrap_or(usize::MAX).min(len.saturating_sub(1));
        if len == 0 || from > to {
            return Ok(Vec::new());
        }
        Ok(s.records[from..=to].to_vec())
    }

    /// Merges `patch` into the live configuration. A `rules` key holds
    /// per-rule patches keyed by rule id; everything else patches the
    /// engine config. On error nothing changes.
    pub fn patch_config(&self, patch: &Value) -> Result<EffectiveConfig, ApiError> {
        let Value::Object(map) = patch else {
            return Err(ApiError::new(422, "patch must be a JSON object"));
        };
        let _serial = self.state.config_lock.lock().unwrap();
        let current = self.engine();
        let mut rest = map.clone();
        let rules = match rest.remove("rules") {
            Some(rp) => current.rules().patched(&rp),
            None => Ok(current.rules().clone()),
        }
        .map_err(|e| ApiError::new(422, e.to_string()))?;
        let config = current
            .config()
            .merged(&Value::Object(rest))
            .map_err(|e| ApiError::new(422, e.to_string()))?;
        let eff = EffectiveConfig {
            config: config.clone(),
            rules: rules.rules().to_vec(),
        };
        if config == *current.config() && rules == *current.rules() {
            return Ok(eff);
        }
        let now = current.clock().now();
        self.state
            .store
            .append(
                &StoreEntry::Config {
                    config: config.clone(),
                    rules: eff.rules.clone(),
                    at: now,
                },
                now,
            )
            .map_err(|e| ApiError::new(500, format!("store write failed: {e}")))?;
        *self.state.engine.write().unwrap() = current.reconfigured(config, rules);
        self.state.hub.publish_all(EventKind::Config, config_json(&eff));
        Ok(eff)
    }

    pub(crate) fn subscribe(
        &self,
        id: &str,
        after: Option<u64>,
    ) -> Option<(Vec<Event>, tokio::sync::broadcast::Receiver<Event>)> {
        self.state.hub.subscribe(id, after)
    }
}

/// Serves until Ctrl-C.
pub async fn serve(service: Service, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "observer service listening");
    axum::serve(listener, service.router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
