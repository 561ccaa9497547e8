//! Chat-model and embedding providers.
//!
//! [`ChatModel`] is the seam between the engine and whatever produces text:
//! an OpenAI-style HTTP endpoint ([`HttpChat`]) or a deterministic script
//! ([`ScriptedChat`], [`FnChat`]) for tests and replays.

mod embedding;
mod http;
mod scripted;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embedding::{embed_remote, EmbeddingDescriptor, RemoteEmbedding};
pub use http::{chat_url, HttpChat};
pub use scripted::{FnChat, ScriptedChat};

use crate::config::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChatParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// Passed through as a hint; the gate still checks the reply length.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("message list is empty")]
    EmptyMessages,
    #[error("scripted provider has no responses left (call {0})")]
    ScriptExhausted(usize),
    #[error("upstream failed after {attempts} attempt(s): {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("upstream returned status {0}")]
    Status(u16),
    #[error("malformed upstream reply: {0}")]
    Malformed(String),
}

pub trait ChatModel: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String, ClientError>;
}

/// Checks the message-list precondition and forwards to the provider.
pub fn chat_complete(
    model: &dyn ChatModel,
    messages: &[ChatMessage],
    params: &ChatParams,
) -> Result<String, ClientError> {
    if messages.is_empty() {
        return Err(ClientError::EmptyMessages);
    }
    model.complete(messages, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    HttpChat,
    Scripted,
}

fn default_endpoint() -> String {
    "http://127.0.0.1:8000".into()
}
fn default_model() -> String {
    "gpt-3.5-turbo".into()
}
fn default_timeout() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    2
}
fn default_backoff() -> u64 {
    200
}

/// Where a chat model lives. Credentials are referenced by environment
/// variable name only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderDescriptor {
    #[serde(default)]
    pub kind: ProviderKind,
    /// Base URL; `/v1/chat/completions` is appended unless already present.
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// First retry delay; doubles on each further retry.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    /// Replies returned in order by a scripted provider.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub responses: Vec<String>,
}

impl Default for ProviderDescriptor {
    fn default() -> Self {
        Self {
            kind: ProviderKind::default(),
            endpoint: default_endpoint(),
            model: default_model(),
            timeout_ms: default_timeout(),
            max_retries: default_retries(),
            backoff_ms: default_backoff(),
            api_key_env: None,
            responses: Vec::new(),
        }
    }
}

impl ProviderDescriptor {
    pub fn scripted<I: IntoIterator<Item = S>, S: Into<String>>(responses: I) -> Self {
        Self {
            kind: ProviderKind::Scripted,
            responses: responses.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn http(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self, key: &str) -> Result<(), ConfigError> {
        let err = |field: &str, reason: &str| ConfigError::Invalid {
            key: format!("{key}.{field}"),
            reason: reason.into(),
        };
        if self.timeout_ms == 0 {
            return Err(err("timeout_ms", "must be positive"));
        }
        match self.kind {
            ProviderKind::Scripted if self.responses.is_empty() => {
                Err(err("responses", "a scripted provider needs at least one response"))
            }
            ProviderKind::HttpChat if self.endpoint.is_empty() => {
                Err(err("endpoint", "must not be empty"))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Arc<dyn ChatModel> {
        match self.kind {
            ProviderKind::HttpChat => Arc::new(HttpChat::new(self.clone())),
            ProviderKind::Scripted => Arc::new(ScriptedChat::new(self.responses.clone())),
        }
    }
}
