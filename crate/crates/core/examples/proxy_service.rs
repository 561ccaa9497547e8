//! The HTTP proxy with a scripted upstream.
//!
//! Starts the service on an ephemeral port, sends two chat turns over real
//! HTTP, then prints the session trace and its event stream backlog. Pass
//! `--serve 127.0.0.1:8080` to keep it running instead.
//!
//! Run with `cargo run --example proxy_service`.

use std::sync::Arc;

use grounded_observer::client::FnChat;
use grounded_observer::config::default_rules;
use grounded_observer::service::{serve, Service, ServiceOptions, SESSION_HEADER, TRACE_HEADER};
use grounded_observer::{Engine, EngineConfig};
use serde_json::{json, Value};

fn post(agent: &ureq::Agent, base: &str, session: Option<&str>, text: &str) -> (String, String, Value) {
    let mut req = agent.post(format!("{base}/v1/chat/completions"));
    if let Some(s) = session {
        req = req.header(SESSION_HEADER, s);
    }
    let mut resp = req
        .send_json(json!({"model": "small-talk", "messages": [{"role": "user", "content": text}]}))
        .expect("request succeeds");
    let header = |h: &str| resp.headers().get(h).unwrap().to_str().unwrap().to_string();
    let (sid, trace) = (header(SESSION_HEADER), header(TRACE_HEADER));
    (sid, trace, resp.body_mut().read_json().unwrap())
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = Arc::new(FnChat::new(|messages, _| {
        let last = &messages.last().unwrap().content;
        Ok(if last.starts_with("Your previous reply was rejected") {
            "Short version: it was great. You?".to_string()
        } else {
            format!("Thanks for asking! {}", ["It was a long and winding day"; 8].join(", "))
        })
    }));
    let config = EngineConfig::default();
    let rules = default_rules(&config);
    let store = std::env::temp_dir().join(format!("observer-proxy-{}", std::process::id()));
    let svc = Service::open(Engine::new(config, rules, base), ServiceOptions::new(&store))?;

    let args: Vec<String> = std::env::args().collect();
    if let Some(addr) = args.iter().position(|a| a == "--serve").and_then(|i| args.get(i + 1)) {
        println!("serving on {addr}, store in {}", store.display());
        serve(svc, addr.parse()?).await?;
        return Ok(());
    }

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let url = format!("http://{}", listener.local_addr()?);
    let router = svc.router();
    tokio::spawn(async move { axum::serve(listener, router).await });

    let report = tokio::task::spawn_blocking(move || {
        let agent = ureq::Agent::new_with_defaults();
        let (sid, trace_id, first) = post(&agent, &url, None, "How was your day?");
        println!("session {sid}, trace {trace_id}");
        println!("reply: {}", first["choices"][0]["message"]["content"]);
        let (_, trace_id, second) = post(&agent, &url, Some(&sid), "Mine was fine.");
        println!("trace {trace_id}, reply: {}", second["choices"][0]["message"]["content"]);

        let trace: Value = agent
            .get(format!("{url}/v1/sessions/{sid}/trace"))
            .call()
            .unwrap()
            .body_mut()
            .read_json()
            .unwrap();
        for r in trace.as_array().unwrap() {
            println!(
                "turn {}: {} candidate(s), forced {}",
                r["turn_index"],
                r["candidates"].as_array().unwrap().len(),
                r["forced_count"]
            );
        }
        sid
    })
    .await?;
    println!("live events for {report}: GET /v1/sessions/{report}/events");
    std::fs::remove_dir_all(&store)?;
    Ok(())
}
