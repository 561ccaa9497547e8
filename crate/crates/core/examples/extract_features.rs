//! Feature extraction on a few candidate replies.
//!
//! Run with `cargo run --example extract_features`.

use grounded_observer::extract::{extract_all, Extractors};
use grounded_observer::EngineConfig;

fn main() {
    let config = EngineConfig::default();
    let ex = Extractors::standard(config.embedding_dim);
    let human = "I spent the weekend hiking near Lake Tahoe.";
    let replies = [
        "Oh nice, how was the weather?",
        "That sounds terrible. I hate hiking, it is awful and boring.",
        "Lake Tahoe is a large freshwater lake in the Sierra Nevada, straddling California and Nevada, \
         known for its clear blue water, sandy beaches, ski resorts in winter and many beautiful, scenic, \
         quiet, peaceful, stunning hiking trails that wind through ancient pine forests.",
        "I can help you find information about hiking gear if you want.",
    ];
    println!(
        "{:<6} {:>7} {:>7} {:>7} {:>9} {:>7}",
        "reply", "tokens", "tone", "spec", "coh_gain", "assist"
    );
    for (i, reply) in replies.iter().enumerate() {
        let f = extract_all(reply, Some(human), &config, &ex).expect("bundled extractors never fail");
        println!(
            "{:<6} {:>7} {:>7.3} {:>7.3} {:>9.3} {:>7.3}",
            i, f.brevity_tokens, f.tone.combined, f.specificity, f.coherence_gain, f.assistance_similarity
        );
    }
    let f = extract_all(replies[1], None, &config, &ex).unwrap();
    println!(
        "\ntone of reply 1: H = {:.3}, sentences = {:?}, C = {:.3}",
        f.tone.holistic, f.tone.sentence_scores, f.tone.combined
    );
}
