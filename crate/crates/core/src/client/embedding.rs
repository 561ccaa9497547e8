use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::http::{bearer, build_agent};
use crate::config::ConfigError;
use crate::extract::{
    EmbeddingProvider, EmbeddingVector, ExtractError, HashEmbedding, DEFAULT_EMBEDDING_SEED,
};

fn default_timeout() -> u64 {
    10_000
}

/// An OpenAI-style `/v1/embeddings` endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingDescriptor {
    pub endpoint: String,
    pub model: String,
    pub dim: usize,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

impl EmbeddingDescriptor {
    pub fn validate(&self, key: &str) -> Result<(), ConfigError> {
        if self.dim == 0 || self.timeout_ms == 0 {
            return Err(ConfigError::Invalid {
                key: key.into(),
                reason: "dim and timeout_ms must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Remote embeddings with a local hash-embedding fallback. A transport or
/// status failure falls back and records a warning; a reply of the wrong
/// dimension is an error.
pub struct RemoteEmbedding {
    desc: EmbeddingDescriptor,
    agent: ureq::Agent,
    fallback: HashEmbedding,
    warnings: Mutex<Vec<String>>,
}

impl RemoteEmbedding {
    pub fn new(desc: EmbeddingDescriptor) -> Self {
        let agent = build_agent(desc.timeout_ms);
        let fallback = HashEmbedding::new(desc.dim, DEFAULT_EMBEDDING_SEED);
        Self {
            desc,
            agent,
            fallback,
            warnings: Mutex::new(Vec::new()),
        }
    }

    fn url(&self) -> String {
        let base = self.desc.endpoint.trim_end_matches('/');
        if base.ends_with("/embeddings") {
            base.to_string()
        } else {
            format!("{base}/v1/embeddings")
        }
    }

    fn fetch(&self, tokens: &[String]) -> Result<Value, String> {
        let mut req = self.agent.post(self.url());
        if let Some(auth) = bearer(self.desc.api_key_env.as_deref()) {
            req = req.header("Authorization", auth);
        }
        let mut resp = req
            .send_json(json!({"model": self.desc.model, "input": tokens}))
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(format!("status {status}"));
        }
        resp.body_mut().read_json().map_err(|e| e.to_string())
    }
}

impl EmbeddingProvider for RemoteEmbedding {
    fn dim(&self) -> usize {
        self.desc.dim
    }

    fn embed(&self, tokens: &[String]) -> Result<Vec<EmbeddingVector>, ExtractError> {
        if tokens.is_empty() {
            return Err(ExtractError::Embedding("token list is empty".into()));
        }
        let doc = match self.fetch(tokens) {
            Ok(doc) => doc,
            Err(e) => {
                self.warnings
                    .lock()
                    .unwrap()
                    .push(format!("embedding service unavailable ({e}); used local embeddings"));
                return self.fallback.embed(tokens);
            }
        };
        let data = doc
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| ExtractError::Embedding("reply has no `data` array".into()))?;
        if data.len() != tokens.len() {
            return Err(ExtractError::Embedding(format!(
                "expected {} vectors, got {}",
                tokens.len(),
                data.len()
            )));
        }
        data.iter()
            .map(|item| {
                let v: Vec<f64> = item
                    .get("embedding")
                    .and_then(Value::as_array)
                    .ok_or_else(|| ExtractError::Embedding("item has no `embedding`".into()))?
                    .iter()
                    .map(|x| x.as_f64().filter(|f| f.is_finite()))
                    .collect::<Option<_>>()
                    .ok_or_else(|| ExtractError::Embedding("non-numeric entry".into()))?;
                if v.len() != self.desc.dim {
                    return Err(ExtractError::DimensionMismatch {
                        expected: self.desc.dim,
                        got: v.len(),
                    });
                }
                Ok(EmbeddingVector(v))
            })
            .collect()
    }

    fn take_warnings(&self) -> Vec<String> {
        std::mem::take(&mut *self.warnings.lock().unwrap())
    }
}

/// Embeds `tokens` through `provider`.
pub fn embed_remote(
    provider: &RemoteEmbedding,
    tokens: &[String],
) -> Result<Vec<EmbeddingVector>, ExtractError> {
    provider.embed(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(endpoint: &str) -> EmbeddingDescriptor {
        EmbeddingDescriptor {
            endpoint: endpoint.into(),
            model: "m".into(),
            dim: 8,
            timeout_ms: 300,
            api_key_env: None,
        }
    }

    #[test]
    fn empty_tokens_rejected() {
        let r = RemoteEmbedding::new(desc("http://127.0.0.1:9"));
        assert!(r.embed(&[]).is_err());
    }

    #[test]
    fn unreachable_falls_back_with_warning() {
        let r = RemoteEmbedding::new(desc("http://127.0.0.1:9"));
        let toks = vec!["hello".to_string(), "there".to_string()];
        let got = embed_remote(&r, &toks).unwrap();
        let local = HashEmbedding::new(8, DEFAULT_EMBEDDING_SEED).embed(&toks).unwrap();
        assert_eq!(got, local);
        let w = r.take_warnings();
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("local embeddings"));
        assert!(r.take_warnings().is_empty());
    }
}
