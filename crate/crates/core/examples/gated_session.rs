//! A multi-turn session through the engine with a scripted base model.
//!
//! The model rambles unless it has just been told to shorten its reply, so
//! the brevity overlay forces one regeneration per turn.
//!
//! Run with `cargo run --example gated_session`.

use std::sync::Arc;

use grounded_observer::client::FnChat;
use grounded_observer::config::default_rules;
use grounded_observer::engine::run_session;
use grounded_observer::harness::TriggerRates;
use grounded_observer::{Engine, EngineConfig};

fn main() {
    let base = Arc::new(FnChat::new(|messages, n| {
        let last = &messages.last().unwrap().content;
        Ok(if last.starts_with("Your previous reply was rejected") {
            "Fair enough! What did you do after that?".to_string()
        } else {
            let filler = ["and then we talked about it some more"; 16].join(", ");
            format!("Oh, reply number {n} here. {filler}.")
        })
    }));
    let config = EngineConfig::default();
    let rules = default_rules(&config);
    let engine = Engine::new(config, rules, base.clone());

    let inputs = ["Hi! How are you?", "I went to the market today.", "They had great peaches."];
    let out = run_session(&engine, "demo", 42, inputs);
    for turn in &out.conversation.turns {
        println!("{:>5}: {}", format!("{:?}", turn.speaker), turn.text);
    }
    println!();
    for r in &out.records {
        let kinds: Vec<String> = r.decisions.iter().map(|d| format!("{:?}", d.kind)).collect();
        println!(
            "turn {}: {} candidate(s) [{}], forced {}",
            r.turn_index,
            r.candidates.len(),
            kinds.join(" -> "),
            r.forced_count
        );
    }
    let rates = TriggerRates::from_records(&out.records);
    println!(
        "\n{} upstream calls; forced fraction {:.2}; implicit fraction {:.2}",
        base.calls(),
        rates.forced_fraction(),
        rates.implicit_fraction()
    );
}
