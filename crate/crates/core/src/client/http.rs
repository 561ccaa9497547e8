use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use super::{ChatMessage, ChatModel, ChatParams, ClientError, ProviderDescriptor};

/// `endpoint` with `/v1/chat/completions` appended unless it already ends in
/// `/chat/completions`.
pub fn chat_url(endpoint: &str) -> String {
    let base = endpoint.trim_end_matches('/');
    if base.ends_with("/chat/completions") {
        base.to_string()
    } else {
        format!("{base}/v1/chat/completions")
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

pub(crate) fn build_agent(timeout_ms: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(timeout_ms)))
        .http_status_as_error(false)
        .build()
        .into()
}

/// Bearer header value from the named environment variable, if set.
pub(crate) fn bearer(api_key_env: Option<&str>) -> Option<String> {
    let var = api_key_env?;
    std::env::var(var).ok().map(|k| format!("Bearer {k}"))
}

fn is_transient(status: u16) -> bool {
    status == 429 || status >= 500
}

/// Chat-completions client with bounded exponential-backoff retries.
pub struct HttpChat {
    desc: ProviderDescriptor,
    agent: ureq::Agent,
}

impl HttpChat {
    pub fn new(desc: ProviderDescriptor) -> Self {
        let agent = build_agent(desc.timeout_ms);
        Self { desc, agent }
    }

    fn attempt(&self, body: &ChatRequest<'_>) -> Result<String, (bool, String)> {
        let mut req = self.agent.post(chat_url(&self.desc.endpoint));
        if let Some(auth) = bearer(self.desc.api_key_env.as_deref()) {
            req = req.header("Authorization", auth);
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            // Transport-level failures are retried. The error text never
            // contains request headers.
            Err(e) => return Err((true, e.to_string())),
        };
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err((is_transient(status), format!("status {status}")));
        }
        let doc: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| (false, format!("malformed: {e}")))?;
        doc.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| (false, "malformed: missing choices[0].message.content".into()))
    }
}

impl ChatModel for HttpChat {
    fn complete(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String, ClientError> {
        if messages.is_empty() {
            return Err(ClientError::EmptyMessages);
        }
        let body = ChatRequest {
            model: &self.desc.model,
            messages,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((true, msg)) if attempts <= self.desc.max_retries => {
                    tracing::debug!(attempts, %msg, "retrying upstream chat call");
                    let delay = self.desc.backoff_ms.saturating_mul(1 << (attempts - 1).min(16));
                    std::thread::sleep(Duration::from_millis(delay));
                }
                Err((true, last)) => return Err(ClientError::RetriesExhausted { attempts, last }),
                Err((false, msg)) => {
                    return Err(match msg.strip_prefix("status ") {
                        Some(code) => ClientError::Status(code.parse().unwrap_or(0)),
                        None => ClientError::Malformed(msg),
                    })
                }
            }
        }
    }
}
