use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::config::Feature;
use crate::conversation::{Conversation, Speaker, Turn};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Line {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("conversation `{conv}`: {reason}")]
    Conversation { conv: String, reason: String },
}

/// The four rated small-talk criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Brevity,
    Tone,
    Specificity,
    Coherence,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::Brevity,
        Criterion::Tone,
        Criterion::Specificity,
        Criterion::Coherence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Brevity => "brevity",
            Criterion::Tone => "tone",
            Criterion::Specificity => "specificity",
            Criterion::Coherence => "coherence",
        }
    }

    pub fn feature(self) -> Feature {
        match self {
            Criterion::Brevity => Feature::Brevity,
            Criterion::Tone => Feature::Tone,
            Criterion::Specificity => Feature::Specificity,
            Criterion::Coherence => Feature::Coherence,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One corpus line: `{"conv", "turn", "speaker", "text"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnRecord {
    pub conv: String,
    pub turn: usize,
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LikertAnnotation {
    pub conv: String,
    pub turn: usize,
    pub rater: String,
    pub criterion: Criterion,
    pub score: u8,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    /// In order of first appearance.
    pub conversations: Vec<Conversation>,
    pub annotations: Vec<LikertAnnotation>,
}

impl Corpus {
    pub fn get(&self, id: &str) -> Option<&Conversation> {
        self.conversations.iter().find(|c| c.id == id)
    }

    /// Turn records for every conversation, in corpus order.
    pub fn turn_records(&self) -> Vec<TurnRecord> {
        self.conversations
            .iter()
            .flat_map(|c| {
                c.turns.iter().filter(|t| !t.placeholder).map(|t| TurnRecord {
                    conv: c.id.clone(),
                    turn: t.index,
                    speaker: t.speaker,
                    text: t.text.clone(),
                })
            })
            .collect()
    }

    /// Every annotation must point at an existing turn.
    pub fn check_annotations(&self) -> Result<(), CorpusError> {
        for a in &self.annotations {
            let conv = self.get(&a.conv).ok_or_else(|| CorpusError::Conversation {
                conv: a.conv.clone(),
                reason: "annotated but not in the corpus".into(),
            })?;
            if a.turn >= conv.turns.len() {
                return Err(CorpusError::Conversation {
                    conv: a.conv.clone(),
                    reason: format!("annotation for missing turn {}", a.turn),
                });
            }
        }
        Ok(())
    }
}

/// Serializes turn records as JSONL.
pub fn write_corpus(records: &[TurnRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("turn records serialize") + "\n")
        .collect()
}

fn line_err(path: &Path, line: usize, reason: impl Into<String>) -> CorpusError {
    CorpusError::Line {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Reads a JSONL file holding turn records, annotation records, or both.
/// Lines with a `rater` key are annotations. Blank lines are skipped.
pub fn ingest_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(&text, path)
}

/// As [`ingest_corpus`] for in-memory text; `path` only labels errors.
pub fn parse_corpus(text: &str, path: &Path) -> Result<Corpus, CorpusError> {
    let mut order: Vec<String> = Vec::new();
    let mut turns: HashMap<String, BTreeMap<usize, (usize, Speaker, String)>> = HashMap::new();
    let mut annotations = Vec::new();
    let mut seen = HashSet::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(raw).map_err(|e| line_err(path, line, format!("invalid JSON: {e}")))?;
        if value.get("rater").is_some() {
            let a: LikertAnnotation = serde_json::from_value(value)
                .map_err(|e| line_err(path, line, format!("annotation: {e}")))?;
            if !(1..=5).contains(&a.score) {
                return Err(line_err(path, line, format!("score {} outside 1..5", a.score)));
            }
            let key = (a.conv.clone(), a.turn, a.rater.clone(), a.criterion);
            if !seen.insert(key) {
                return Err(line_err(
                    path,
                    line,
                    format!(
                        "duplicate annotation for conv `{}` turn {} rater `{}` criterion {}",
                        a.conv, a.turn, a.rater, a.criterion
                    ),
                ));
            }
            annotations.push(a);
        } else {
            let r: TurnRecord = serde_json::from_value(value)
                .map_err(|e| line_err(path, line, format!("turn: {e}")))?;
            if r.text.trim().is_empty() {
                return Err(line_err(path, line, "empty turn text"));
            }
            if !turns.contains_key(&r.conv) {
                order.push(r.conv.clone());
            }
            let slot = turns.entry(r.conv.clone()).or_default();
            if slot.insert(r.turn, (line, r.speaker, r.text)).is_some() {
                return Err(line_err(
                    path,
                    line,
                    format!("duplicate turn {} in conv `{}`", r.turn, r.conv),
                ));
            }
        }
    }

    let mut conversations = Vec::with_capacity(order.len());
    for id in order {
        let mut conv = Conversation::new(id.clone());
        for (expected, (index, (line, speaker, text))) in turns.remove(&id).unwrap().into_iter().enumerate() {
            if index != expected {
                return Err(line_err(
                    path,
                    line,
                    format!("conv `{id}` turn {index} leaves a gap (expected {expected})"),
                ));
            }
            conv.turns.push(Turn {
                speaker,
                text,
                index,
                timestamp: None,
                placeholder: false,
            });
        }
        conversations.push(conv);
    }
    Ok(Corpus {
        conversations,
        annotations,
    })
}
