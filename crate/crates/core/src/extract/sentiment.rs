use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::text::{segment, tokens};
use super::ExtractError;
use crate::config::ToneWeights;

const BUNDLED_LEXICON: &str = include_str!("../../data/sentiment_lexicon.tsv");

/// Token valences in [-1, 1]. Lookups are case-insensitive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SentimentLexicon {
    valences: HashMap<String, f64>,
}

impl SentimentLexicon {
    pub fn new<I, S>(entries: I) -> Result<Self, ExtractError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: AsRef<str>,
    {
        let mut valences = HashMap::new();
        for (token, v) in entries {
            let token = token.as_ref();
            if !(-1.0..=1.0).contains(&v) {
                return Err(ExtractError::Lexicon(format!(
                    "valence {v} for `{token}` is outside [-1, 1]"
                )));
            }
            valences.insert(token.to_lowercase(), v);
        }
        Ok(Self { valences })
    }

    /// Parses `token<TAB>valence` lines. Blank lines and `#` comments are
    /// skipped.
    pub fn parse(text: &str) -> Result<Self, ExtractError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (token, value) = line
                .split_once('\t')
                .ok_or_else(|| ExtractError::Lexicon(format!("line {}: expected a tab", n + 1)))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| ExtractError::Lexicon(format!("line {}: bad valence", n + 1)))?;
            entries.push((token.trim().to_string(), value));
        }
        Self::new(entries)
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn valence(&self, token: &str) -> Option<f64> {
        self.valences.get(&token.to_lowercase()).copied()
    }

    pub fn len(&self) -> usize {
        self.valences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valences.is_empty()
    }
}

fn mean_valence<'a>(tokens: impl Iterator<Item = &'a str>, lexicon: &SentimentLexicon) -> f64 {
    let (sum, count) = tokens
        .filter_map(|t| lexicon.valence(t))
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).clamp(-1.0, 1.0)
    }
}

/// Mean valence of the lexicon-matched tokens; 0 when nothing matches.
pub fn sentiment_score(sentence: &str, lexicon: &SentimentLexicon) -> f64 {
    let toks = tokens(sentence);
    mean_valence(toks.iter().map(String::as_str), lexicon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneScore {
    /// C = H·w_H + (1/n)·Σ s_i·w_i
    pub combined: f64,
    /// Holistic score over the whole token stream.
    pub holistic: f64,
    pub sentence_scores: Vec<f64>,
    pub n: usize,
}

impl ToneScore {
    pub fn from_parts(holistic: f64, sentence_scores: Vec<f64>, weights: &ToneWeights) -> Self {
        let sentence_scores = if sentence_scores.is_empty() {
            vec![0.0]
        } else {
            sentence_scores
        };
        let n = sentence_scores.len();
        let weighted: f64 = sentence_scores
            .iter()
            .enumerate()
            .map(|(i, s)| s * weights.sentence_weight(i))
            .sum();
        Self {
            combined: holistic * weights.holistic + weighted / n as f64,
            holistic,
            sentence_scores,
            n,
        }
    }

    /// Recomputes C from the stored parts.
    pub fn recompute(&self, weights: &ToneWeights) -> f64 {
        Self::from_parts(self.holistic, self.sentence_scores.clone(), weights).combined
    }
}

pub fn combined_tone(text: &str, lexicon: &SentimentLexicon, weights: &ToneWeights) -> ToneScore {
    let seg = segment(text);
    let holistic = mean_valence(seg.tokens.iter().map(String::as_str), lexicon);
    let sentence_scores = seg
        .sentences
        .iter()
        .map(|s| sentiment_score(s, lexicon))
        .collect();
    ToneScore::from_parts(holistic, sentence_scores, weights)
}
