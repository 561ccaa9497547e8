//! Corpus ingestion, automatic scoring, human-likeness and the report.
//!
//! Writes a small corpus to a temporary directory, reads it back, scores
//! every turn and prints the markdown report.
//!
//! Run with `cargo run --example corpus_report`.

use grounded_observer::config::EngineConfig;
use grounded_observer::extract::Extractors;
use grounded_observer::harness::corpus::write_corpus;
use grounded_observer::harness::scoring::likeness_from_scores;
use grounded_observer::harness::{auto_score, ingest_corpus, render, ReportInput, TurnRecord};
use grounded_observer::Speaker;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dialogue = [
        ("c1", "Hi! How was your weekend?", "Lovely, thanks. I baked bread. You?"),
        ("c1", "I watched a movie.", "Which one? I love a good thriller."),
        ("c2", "Hey, what's new?", "Not much! Just got back from a long walk by the river."),
        ("c2", "Sounds relaxing.", "It was. The weather was perfect and the ducks were out."),
    ];
    let mut records = Vec::new();
    let mut next = std::collections::BTreeMap::new();
    for (conv, human, agent) in dialogue {
        let turn = next.entry(conv).or_insert(0usize);
        for (speaker, text) in [(Speaker::Human, human), (Speaker::Agent, agent)] {
            records.push(TurnRecord {
                conv: conv.into(),
                turn: *turn,
                speaker,
                text: text.into(),
            });
            *turn += 1;
        }
    }
    let dir = std::env::temp_dir().join(format!("observer-corpus-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("corpus.jsonl");
    std::fs::write(&path, write_corpus(&records))?;

    let corpus = ingest_corpus(&path)?;
    let config = EngineConfig::default();
    let ex = Extractors::standard(config.embedding_dim);
    let mut scores = Vec::new();
    let mut likeness = Vec::new();
    for conv in &corpus.conversations {
        let s = auto_score(conv, &config, &ex)?;
        likeness.extend(likeness_from_scores(&conv.id, &s));
        scores.extend(s);
    }
    let report = render(&ReportInput {
        title: "Corpus report",
        scores: &scores,
        likeness: &likeness,
        ..Default::default()
    });
    println!("{}", report.markdown);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
