//! Overlay rules and the gate on a single candidate.
//!
//! Loads the bundled small-talk rules, scores a long-winded reply, and shows
//! the ranked descriptors, the gate's decision and the directive it writes.
//!
//! Run with `cargo run --example overlay_rules`.

use grounded_observer::config::{parse_rules, BUNDLED_RULES};
use grounded_observer::extract::{extract_all, Extractors};
use grounded_observer::gate::decide;
use grounded_observer::observer::ClauseBook;
use grounded_observer::overlay::evaluate_all;
use grounded_observer::{EngineConfig, RngState};

fn main() {
    let config = EngineConfig::default();
    let rules = parse_rules(BUNDLED_RULES).expect("bundled rules parse");
    for r in rules.rules() {
        println!(
            "rule {:<12} {:?} {:?} {} rigidity {}",
            r.id, r.feature, r.comparator, r.threshold, r.rigidity
        );
    }

    let reply = "Well, there are so many things to say about that. Honestly the weather in Paris, \
                 London and Berlin has been unusually warm, bright, sunny, humid, lovely and pleasant \
                 this year, and I think that the museums, the galleries, the parks and the little cafes \
                 along the river are all worth visiting at least once, especially in the late spring.";
    let ex = Extractors::standard(config.embedding_dim);
    let reply = format!("{reply} {reply}");
    let features = extract_all(&reply, Some("Any plans this summer?"), &config, &ex).unwrap();
    let descriptors = evaluate_all(&rules, &features);
    println!("\n{} descriptor(s):", descriptors.len());
    for d in &descriptors {
        println!("  [{:.2}] {}", d.deviation, d.text);
    }

    let clauses = ClauseBook::bundled();
    let mut rng = RngState::new(config.rng_seed);
    for attempt in 0..=config.max_regenerations {
        let decision = decide(&descriptors, &rules, attempt, &mut rng, &config, &clauses).unwrap();
        println!(
            "\nattempt {attempt}: {:?} (budget exhausted: {})",
            decision.kind, decision.budget_exhausted
        );
        if let Some(d) = decision.directive {
            println!("  {:?} directive: {}", d.kind, d.text);
        }
    }
    println!("\nsoft urgent breaches drew {} coin flip(s) from the session RNG", rng.counter);
}
