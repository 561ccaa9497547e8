use serde::{Deserialize, Serialize};

use super::corpus::Criterion;
use super::stats::StatsError;
use crate::config::{EngineConfig, ScoringBins};
use crate::conversation::{Conversation, Speaker};
use crate::extract::{extract_all, ExtractError, Extractors, FeatureVector};

/// ≤ bins[0] → 5, ≤ bins[1] → 4, ≤ bins[2] → 3, ≤ bins[3] → 2, else 1.
fn ascending_bins(x: f64, bins: [f64; 4]) -> u8 {
    match bins.iter().position(|b| x <= *b) {
        Some(i) => 5 - i as u8,
        None => 1,
    }
}

pub fn brevity_score(tokens: usize, bins: &ScoringBins) -> u8 {
    ascending_bins(tokens as f64, bins.brevity_tokens.map(f64::from))
}

/// Five equal-width bins over [-1, 1]; the most positive bin scores 5.
pub fn tone_score(combined: f64) -> u8 {
    let bin = ((combined.clamp(-1.0, 1.0) + 1.0) / 0.4).floor() as u8;
    bin.min(4) + 1
}

/// Quintiles of [0, 1], inverted: the least specific fifth scores 5.
pub fn specificity_score(specificity: f64) -> u8 {
    let bin = (specificity.clamp(0.0, 1.0) / 0.2).floor() as u8;
    5 - bin.min(4)
}

pub fn coherence_score(gain: f64, bins: &ScoringBins) -> u8 {
    ascending_bins(gain, bins.coherence_gain)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionScores {
    pub brevity: u8,
    pub tone: u8,
    pub specificity: u8,
    pub coherence: u8,
}

impl CriterionScores {
    pub fn from_features(fv: &FeatureVector, bins: &ScoringBins) -> Self {
        Self {
            brevity: brevity_score(fv.brevity_tokens, bins),
            tone: tone_score(fv.tone.combined),
            specificity: specificity_score(fv.specificity),
            coherence: coherence_score(fv.coherence_gain, bins),
        }
    }

    pub fn get(&self, c: Criterion) -> u8 {
        match c {
            Criterion::Brevity => self.brevity,
            Criterion::Tone => self.tone,
            Criterion::Specificity => self.specificity,
            Criterion::Coherence => self.coherence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnScores {
    pub conv: String,
    pub turn: usize,
    pub speaker: Speaker,
    pub scores: CriterionScores,
}

/// Likert-equivalent scores for every non-placeholder turn. Coherence is
/// measured against the same speaker's previous turn.
pub fn auto_score(
    conversation: &Conversation,
    config: &EngineConfig,
    extractors: &Extractors,
) -> Result<Vec<TurnScores>, ExtractError> {
    let mut out = Vec::new();
    for turn in conversation.turns.iter().filter(|t| !t.placeholder) {
        let reference = conversation
            .turns
            .iter()
            .take(turn.index)
            .rev()
            .find(|t| t.speaker == turn.speaker && !t.placeholder)
            .map(|t| t.text.as_str());
        let fv = extract_all(&turn.text, reference, config, extractors)?;
        out.push(TurnScores {
            conv: conversation.id.clone(),
            turn: turn.index,
            speaker: turn.speaker,
            scores: CriterionScores::from_features(&fv, &config.scoring),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanLikenessScore {
    pub conv: String,
    pub criterion: Criterion,
    pub value: f64,
}

fn mean_score(xs: &[u8]) -> Result<f64, StatsError> {
    if xs.is_empty() {
        return Err(StatsError::Empty);
    }
    if let Some(bad) = xs.iter().find(|x| !(1..=5).contains(*x)) {
        return Err(StatsError::ScoreRange(*bad));
    }
    Ok(xs.iter().map(|&x| f64::from(x)).sum::<f64>() / xs.len() as f64)
}

/// |mean(human) − mean(agent)| on the 1..5 scale.
pub fn human_likeness(
    conv: &str,
    criterion: Criterion,
    human: &[u8],
    agent: &[u8],
) -> Result<HumanLikenessScore, StatsError> {
    Ok(HumanLikenessScore {
        conv: conv.to_string(),
        criterion,
        value: (mean_score(human)? - mean_score(agent)?).abs(),
    })
}

/// Human-likeness per criterion from scored turns of one conversation.
/// Criteria lacking either side are skipped.
pub fn likeness_from_scores(conv: &str, scores: &[TurnScores]) -> Vec<HumanLikenessScore> {
    Criterion::ALL
        .iter()
        .filter_map(|&c| {
            let side = |s: Speaker| -> Vec<u8> {
                scores
                    .iter()
                    .filter(|t| t.speaker == s)
                    .map(|t| t.scores.get(c))
                    .collect()
            };
            human_likeness(conv, c, &side(Speaker::Human), &side(Speaker::Agent)).ok()
        })
        .collect()
}
