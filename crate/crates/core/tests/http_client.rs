mod common;

use common::{completion, Stub};
use grounded_observer::client::{
    embed_remote, ChatMessage, ChatModel, ChatParams, ClientError, EmbeddingDescriptor, HttpChat,
    ProviderDescriptor, RemoteEmbedding,
};
use grounded_observer::extract::{EmbeddingProvider, ExtractError};
use serde_json::json;

fn desc(url: &str) -> ProviderDescriptor {
    ProviderDescriptor {
        backoff_ms: 1,
        timeout_ms: 2_000,
        ..ProviderDescriptor::http(url)
    }
}

#[test]
fn round_trip_through_stub() {
    let stub = Stub::echo("hello back");
    let chat = HttpChat::new(desc(&stub.url));
    let params = ChatParams {
        temperature: Some(0.5),
        max_tokens: Some(64),
    };
    let out = chat
        .complete(&[ChatMessage::system("be nice"), ChatMessage::user("hi")], &params)
        .unwrap();
    assert_eq!(out, "hello back");
    let seen = stub.seen();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(
        seen[0].body,
        json!({
            "model": "gpt-3.5-turbo",
            "messages": [{"role": "system", "content": "be nice"}, {"role": "user", "content": "hi"}],
            "temperature": 0.5,
            "max_tokens": 64,
        })
    );
    assert_eq!(seen[0].authorization, None);
}

#[test]
fn credential_is_sent_but_never_reported() {
    let secret = "sk-test-5e6f7a8b9c";
    std::env::set_var("HTTP_CLIENT_TEST_KEY", secret);
    let stub = Stub::start(|_, _| (500, json!({"error": "boom"})));
    let chat = HttpChat::new(ProviderDescriptor {
        api_key_env: Some("HTTP_CLIENT_TEST_KEY".into()),
        max_retries: 1,
        ..desc(&stub.url)
    });
    let err = chat.complete(&[ChatMessage::user("hi")], &ChatParams::default()).unwrap_err();
    assert_eq!(stub.seen()[0].authorization.as_deref(), Some(&*format!("Bearer {secret}")));
    assert!(!err.to_string().contains(secret));
    assert!(!format!("{err:?}").contains(secret));
}

#[test]
fn transient_failures_retry_within_budget() {
    let stub = Stub::start(|_, _| (503, json!({})));
    let chat = HttpChat::new(ProviderDescriptor {
        max_retries: 2,
        ..desc(&stub.url)
    });
    let err = chat.complete(&[ChatMessage::user("hi")], &ChatParams::default()).unwrap_err();
    assert!(matches!(err, ClientError::RetriesExhausted { attempts: 3, .. }), "{err}");
    assert_eq!(stub.seen().len(), 3);
}

#[test]
fn recovers_after_a_transient_failure() {
    let stub = Stub::start(|_, n| if n == 0 { (502, json!({})) } else { (200, completion("ok")) });
    let chat = HttpChat::new(desc(&stub.url));
    assert_eq!(chat.complete(&[ChatMessage::user("hi")], &ChatParams::default()).unwrap(), "ok");
    assert_eq!(stub.seen().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let stub = Stub::start(|_, _| (400, json!({})));
    let chat = HttpChat::new(desc(&stub.url));
    let err = chat.complete(&[ChatMessage::user("hi")], &ChatParams::default()).unwrap_err();
    assert_eq!(err, ClientError::Status(400));
    assert_eq!(stub.seen().len(), 1);
}

#[test]
fn malformed_reply_is_reported() {
    let stub = Stub::start(|_, _| (200, json!({"choices": []})));
    let chat = HttpChat::new(desc(&stub.url));
    let err = chat.complete(&[ChatMessage::user("hi")], &ChatParams::default()).unwrap_err();
    assert!(matches!(err, ClientError::Malformed(_)), "{err}");
}

fn embed_desc(url: &str, dim: usize) -> EmbeddingDescriptor {
    EmbeddingDescriptor {
        endpoint: url.into(),
        model: "emb".into(),
        dim,
        timeout_ms: 2_000,
        api_key_env: None,
    }
}

#[test]
fn remote_embeddings_pass_through() {
    let stub = Stub::start(|body, _| {
        let n = body["input"].as_array().unwrap().len();
        let data: Vec<_> = (0..n).map(|i| json!({"embedding": [i as f64, 1.0, 0.0]})).collect();
        (200, json!({"data": data}))
    });
    let p = RemoteEmbedding::new(embed_desc(&stub.url, 3));
    let tokens = vec!["a".to_string(), "b".to_string()];
    let v = embed_remote(&p, &tokens).unwrap();
    assert_eq!(v[1].0, vec![1.0, 1.0, 0.0]);
    assert_eq!(stub.seen()[0].path, "/v1/embeddings");
    assert_eq!(stub.seen()[0].body, json!({"model": "emb", "input": ["a", "b"]}));
}

#[test]
fn wrong_dimension_is_an_error() {
    let stub = Stub::start(|_, _| (200, json!({"data": [{"embedding": [1.0, 2.0]}]})));
    let p = RemoteEmbedding::new(embed_desc(&stub.url, 3));
    let err = embed_remote(&p, &["a".to_string()]).unwrap_err();
    assert!(matches!(err, ExtractError::DimensionMismatch { expected: 3, got: 2 }), "{err}");
}

#[test]
fn unavailable_service_falls_back_with_warning() {
    let stub = Stub::start(|_, _| (503, json!({})));
    let p = RemoteEmbedding::new(embed_desc(&stub.url, 4));
    let v = p.embed(&["a".to_string()]).unwrap();
    assert_eq!(v[0].dim(), 4);
    assert_eq!(p.take_warnings().len(), 1);
}
