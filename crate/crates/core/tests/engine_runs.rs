mod common;

use std::sync::Arc;

use common::{brevity_only, rule, words};
use grounded_observer::client::{ChatModel, FnChat, ScriptedChat};
use grounded_observer::config::{default_rules, Comparator, Threshold};
use grounded_observer::engine::{run_session, FixedClock};
use grounded_observer::extract::extract_all;
use grounded_observer::{DecisionKind, Engine, EngineConfig, Feature, RuleSet, SessionState};
use proptest::prelude::*;

fn engine(base: Arc<dyn ChatModel>, rules: RuleSet) -> Engine {
    Engine::new(EngineConfig::default(), rules, base).with_clock(Arc::new(FixedClock::default()))
}

fn varied_base() -> Arc<FnChat> {
    Arc::new(FnChat::new(|msgs, n| {
        let last = &msgs.last().unwrap().content;
        Ok(if last.starts_with("Your previous reply was rejected") {
            "Sure, short answer. How about you?".to_string()
        } else if n % 3 == 0 {
            words(50 + n % 7)
        } else {
            format!("That sounds lovely. Paris in June is great, {}", words(n % 11))
        })
    }))
}

#[test]
fn identical_runs_serialize_identically() {
    let inputs = ["hi there", "what did you do today", "tell me about trips", "ok", "bye"];
    let runs: Vec<String> = (0..3)
        .map(|_| {
            let config = EngineConfig::default();
            let rules = default_rules(&config);
            let e = Engine::new(config, rules, varied_base()).with_clock(Arc::new(FixedClock::default()));
            let out = run_session(&e, "det", 7, inputs);
            assert!(out.errors.is_empty(), "{:?}", out.errors);
            out.records
                .iter()
                .map(|r| serde_json::to_string(r).unwrap())
                .collect::<Vec<_>>()
                .join("\n")
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[1], runs[2]);
}

#[test]
fn soft_tone_breach_becomes_next_turn_advice() {
    let rules = RuleSet::new(vec![rule(
        "tone",
        Feature::Tone,
        Comparator::WithinRange,
        Threshold::Range([-0.5, 1.0]),
        0.5,
    )])
    .unwrap();
    let base = Arc::new(ScriptedChat::new([
        "Terrible awful horrible day. I hate it.",
        "Nice to hear from you!",
    ]));
    let e = engine(base.clone(), rules);
    let mut s = SessionState::new("t", 1, FixedClock::default().0);
    let first = s.step(&e, "how was your day").unwrap().clone();
    assert_eq!(first.decisions.len(), 1);
    assert_eq!(first.decisions[0].kind, DecisionKind::AcceptWithImplicit);
    assert!(first.flagged_implicit());
    let advice = first.pending_implicit.clone().expect("advice queued");
    s.step(&e, "oh no").unwrap();
    let second_prompt = &base.requests()[1];
    assert!(second_prompt
        .iter()
        .any(|m| m.content.starts_with("Feedback on your earlier replies:") && m.content.contains(&advice.text)));
}

#[test]
fn stored_features_match_the_accepted_text() {
    let config = EngineConfig::default();
    let rules = default_rules(&config);
    let e = engine(varied_base(), rules);
    let out = run_session(&e, "f", 3, ["hello", "and then?", "nice", "really"]);
    for r in &out.records {
        for c in &r.candidates {
            let again = extract_all(&c.text, None, e.config(), e.extractors()).unwrap();
            assert_eq!(again.brevity_tokens, c.features.brevity_tokens);
            assert!((again.tone.combined - c.features.tone.combined).abs() < 1e-12);
            assert!((again.specificity - c.features.specificity).abs() < 1e-12);
        }
        let i = r.accepted_index.unwrap();
        assert_eq!(r.candidates[i].text, r.accepted_text);
    }
}

#[test]
fn call_budget_is_one_plus_max_regenerations() {
    let base = Arc::new(FnChat::new(|_, n| Ok(words(60 + n))));
    let e = engine(base.clone(), brevity_only(40.0, 1.0));
    let out = run_session(&e, "b", 0, ["a", "b", "c"]);
    let max = e.config().max_regenerations as usize;
    assert_eq!(base.calls(), 3 * (1 + max));
    for r in &out.records {
        assert_eq!(r.candidates.len(), 1 + max);
        assert!(r.budget_exhausted());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_candidate_is_traced(lengths in prop::collection::vec(1usize..90, 1..12), seed in 0u64..1000) {
        let script = lengths.clone();
        let base = Arc::new(FnChat::new(move |_, n| Ok(words(script[n % script.len()]))));
        let e = engine(base.clone(), brevity_only(40.0, 0.6));
        let out = run_session(&e, "p", seed, ["one", "two", "three"]);
        prop_assert!(out.errors.is_empty());
        let traced: usize = out.records.iter().map(|r| r.candidates.len()).sum();
        prop_assert_eq!(traced, base.calls());
        for r in &out.records {
            prop_assert_eq!(r.candidates.len(), r.decisions.len());
            prop_assert_eq!(r.forced_count as usize, r.regenerations());
            prop_assert!(r.candidates.len() <= 1 + e.config().max_regenerations as usize);
            let rejects = r.decisions.iter().filter(|d| d.kind == DecisionKind::Reject).count();
            prop_assert_eq!(rejects, r.candidates.len() - 1);
        }
    }
}
