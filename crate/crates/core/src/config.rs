//! Engine configuration, overlay rules, and the rule-file model.
//!
//! Both the config and the rule file are TOML documents. Every config key is
//! optional and falls back to the defaults below; unknown keys are rejected in
//! both documents so a typo never silently disables a guardrail.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{EmbeddingDescriptor, ProviderDescriptor};

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a friendly companion who engages in casual, small talk. \
Keep replies brief, light and positive, avoid highly specific details, and stay on the current topic.";

const RULE_PLACEHOLDERS: [&str; 3] = ["{feature}", "{value}", "{threshold}"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to parse document: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("duplicate rule id `{0}`")]
    DuplicateRule(String),
    #[error("rule `{id}`: {reason}")]
    InvalidRule { id: String, reason: String },
    #[error("unknown rule id `{0}`")]
    UnknownRule(String),
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn check_unit(key: &str, v: f64) -> Result<(), ConfigError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid(key, format!("{v} is outside [0, 1]")));
    }
    Ok(())
}

/// The quantity an overlay rule constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    /// Completion-token count of the reply.
    Brevity,
    /// Combined tone score C.
    Tone,
    Specificity,
    /// Absolute entropy change against the reference turn.
    Coherence,
    /// Similarity to assistance keywords.
    Assistance,
}

impl Feature {
    pub const ALL: [Feature; 5] = [
        Feature::Brevity,
        Feature::Tone,
        Feature::Specificity,
        Feature::Coherence,
        Feature::Assistance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Brevity => "brevity",
            Feature::Tone => "tone",
            Feature::Specificity => "specificity",
            Feature::Coherence => "coherence",
            Feature::Assistance => "assistance",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    AtMost,
    AtLeast,
    WithinRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Threshold {
    Value(f64),
    Range([f64; 2]),
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Value(v) => write!(f, "{}", fmt_number(*v)),
            Threshold::Range([lo, hi]) => write!(f, "[{}, {}]", fmt_number(*lo), fmt_number(*hi)),
        }
    }
}

/// Three decimals at most, trailing zeros trimmed.
pub(crate) fn fmt_number(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn default_urgent_threshold() -> f64 {
    0.8
}

fn default_template() -> String {
    "{feature} is {value} against threshold {threshold}".to_string()
}

fn default_priority() -> u32 {
    1
}

/// One declarative overlay: "if `feature` breaks `comparator threshold`,
/// describe the deviation". `rigidity` (ε) sets how much deviation the gate
/// tolerates before it forces a regeneration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlayRule {
    pub id: String,
    pub feature: Feature,
    pub comparator: Comparator,
    pub threshold: Threshold,
    pub rigidity: f64,
    #[serde(default = "default_urgent_threshold")]
    pub urgent_threshold: f64,
    #[serde(default = "default_template")]
    pub descriptor_template: String,
    #[serde(default = "default_priority")]
    pub priority: u32,
}

impl OverlayRule {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |reason: String| ConfigError::InvalidRule {
            id: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(bad("id must not be empty".into()));
        }
        if !(0.0..=1.0).contains(&self.rigidity) {
            return Err(bad(format!("rigidity {} is outside [0, 1]", self.rigidity)));
        }
        if !(self.urgent_threshold > 0.0 && self.urgent_threshold <= 1.0) {
            return Err(bad(format!(
                "urgent_threshold {} is outside (0, 1]",
                self.urgent_threshold
            )));
        }
        if self.priority == 0 {
            return Err(bad("priority must be positive".into()));
        }
        for p in RULE_PLACEHOLDERS {
            if !self.descriptor_template.contains(p) {
                return Err(bad(format!("descriptor_template is missing {p}")));
            }
        }
        match (self.comparator, self.threshold) {
            (Comparator::WithinRange, Threshold::Range([lo, hi])) => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(bad(format!("range [{lo}, {hi}] requires lo <= hi")));
                }
            }
            (Comparator::WithinRange, Threshold::Value(_)) => {
                return Err(bad("within_range needs a [lo, hi] threshold".into()));
            }
            (_, Threshold::Range(_)) => {
                return Err(bad("at_most/at_least need a scalar threshold".into()));
            }
            (_, Threshold::Value(v)) if !v.is_finite() => {
                return Err(bad("threshold must be finite".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

/// A validated rule list: unique ids, sorted by priority (stable).
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
#[serde(transparent)]
pub struct RuleSet {
    rules: Vec<OverlayRule>,
}

impl RuleSet {
    pub fn new(mut rules: Vec<OverlayRule>) -> Result<Self, ConfigError> {
        let mut seen = HashSet::new();
        for rule in &rules {
            if !seen.insert(rule.id.as_str()) {
                return Err(ConfigError::DuplicateRule(rule.id.clone()));
            }
            rule.validate()?;
        }
        rules.sort_by_key(|r| r.priority);
        Ok(Self { rules })
    }

    pub fn rules(&self) -> &[OverlayRule] {
        &self.rules
    }

    pub fn get(&self, id: &str) -> Option<&OverlayRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn into_vec(self) -> Vec<OverlayRule> {
        self.rules
    }

    /// Applies `{rule_id: partial rule}` merge patches. Ids cannot change.
    pub fn patched(&self, patch: &serde_json::Value) -> Result<RuleSet, ConfigError> {
        let serde_json::Value::Object(map) = patch else {
            return Err(ConfigError::Parse("rules patch must be an object keyed by rule id".into()));
        };
        if let Some(id) = map.keys().find(|id| self.get(id).is_none()) {
            return Err(ConfigError::UnknownRule(id.clone()));
        }
        let mut out = Vec::with_capacity(self.rules.len());
        for rule in &self.rules {
            let Some(p) = map.get(&rule.id) else {
                out.push(rule.clone());
                continue;
            };
            let mut doc = serde_json::to_value(rule).expect("rules serialize");
            merge_json(&mut doc, p);
            let next: OverlayRule = serde_json::from_value(doc).map_err(|e| ConfigError::InvalidRule {
                id: rule.id.clone(),
                reason: e.to_string(),
            })?;
            if next.id != rule.id {
                return Err(ConfigError::InvalidRule {
                    id: rule.id.clone(),
                    reason: "id cannot be patched".into(),
                });
            }
            out.push(next);
        }
        RuleSet::new(out)
    }
}

impl<'de> Deserialize<'de> for RuleSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rules = Vec::<OverlayRule>::deserialize(d)?;
        RuleSet::new(rules).map_err(serde::de::Error::custom)
    }
}

/// Validates a rule list: rejects duplicate ids, bad rigidity and templates
/// missing placeholders, then sorts stably by priority.
pub fn validate_rules(rules: Vec<OverlayRule>) -> Result<RuleSet, ConfigError> {
    RuleSet::new(rules)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    #[serde(default)]
    rule: Vec<OverlayRule>,
}

/// Parses a rule file: a TOML document with one `[[rule]]` table per rule.
pub fn parse_rules(text: &str) -> Result<RuleSet, ConfigError> {
    let file: RuleFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    RuleSet::new(file.rule)
}

pub fn rules_to_toml(rules: &RuleSet) -> String {
    toml::to_string(&RuleFile {
        rule: rules.rules.clone(),
    })
    .expect("rule set serializes")
}

/// Per-sentence weights: one scalar shared by every sentence, or an explicit
/// list (sentences past the end of the list reuse its last weight).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SentenceWeights {
    Uniform(f64),
    PerSentence(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneWeights {
    /// Weight of the holistic score H.
    pub holistic: f64,
    pub sentence: SentenceWeights,
}

impl Default for ToneWeights {
    fn default() -> Self {
        Self {
            holistic: 0.5,
            sentence: SentenceWeights::Uniform(0.5),
        }
    }
}

impl ToneWeights {
    pub fn uniform(holistic: f64, sentence: f64) -> Self {
        Self {
            holistic,
            sentence: SentenceWeights::Uniform(sentence),
        }
    }

    /// Weight of the `i`-th sentence (0-based).
    pub fn sentence_weight(&self, i: usize) -> f64 {
        match &self.sentence {
            SentenceWeights::Uniform(w) => *w,
            SentenceWeights::PerSentence(ws) => ws[i.min(ws.len() - 1)],
        }
    }

    fn max_sentence_weight(&self) -> f64 {
        match &self.sentence {
            SentenceWeights::Uniform(w) => *w,
            SentenceWeights::PerSentence(ws) => ws.iter().copied().fold(f64::MIN, f64::max),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check_unit("tone_weights.holistic", self.holistic)?;
        match &self.sentence {
            SentenceWeights::Uniform(w) => check_unit("tone_weights.sentence", *w)?,
            SentenceWeights::PerSentence(ws) => {
                if ws.is_empty() {
                    return Err(invalid("tone_weights.sentence", "list must not be empty"));
                }
                for w in ws {
                    check_unit("tone_weights.sentence", *w)?;
                }
            }
        }
        // Every sentence weight is bounded, not just the mean: with a list
        // reused past its end only a per-position bound keeps |C| <= 1.
        if self.holistic + self.max_sentence_weight() > 1.0 + 1e-12 {
            return Err(invalid(
                "tone_weights",
                "holistic + sentence weight must not exceed 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecificityMax {
    pub max_entities: u32,
    pub max_descriptive: u32,
}

impl Default for SpecificityMax {
    fn default() -> Self {
        Self {
            max_entities: 4,
            max_descriptive: 6,
        }
    }
}

/// Which earlier turn the coherence extractor measures information gain
/// against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoherenceReference {
    #[default]
    PreviousAgent,
    PreviousHuman,
}

/// Upper bounds of the 1..5 Likert bins used by automated scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringBins {
    /// Token-count upper bounds for scores 5, 4, 3, 2; anything longer is 1.
    pub brevity_tokens: [u32; 4],
    /// Coherence-gain upper bounds for scores 5, 4, 3, 2; anything larger is 1.
    pub coherence_gain: [f64; 4],
}

impl Default for ScoringBins {
    fn default() -> Self {
        Self {
            brevity_tokens: [20, 40, 60, 90],
            coherence_gain: [0.1, 0.25, 0.5, 1.0],
        }
    }
}

impl ScoringBins {
    fn validate(&self) -> Result<(), ConfigError> {
        if !self.brevity_tokens.windows(2).all(|w| w[0] < w[1]) {
            return Err(invalid("scoring.brevity_tokens", "bounds must increase"));
        }
        if !self.coherence_gain.windows(2).all(|w| w[0] < w[1]) || self.coherence_gain[0] < 0.0 {
            return Err(invalid(
                "scoring.coherence_gain",
                "bounds must be nonnegative and increase",
            ));
        }
        Ok(())
    }
}

fn default_keywords() -> Vec<String> {
    ["help", "assist", "information"]
        .into_iter()
        .map(String::from)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub tone_weights: ToneWeights,
    pub brevity_limit_tokens: u32,
    pub specificity_max_counts: SpecificityMax,
    pub tone_acceptable_range: [f64; 2],
    /// Entropy change in nats. The first agent turn compares against 0, so
    /// its gain is the reply's own entropy, at most ln(tokens).
    pub coherence_threshold: f64,
    pub coherence_reference: CoherenceReference,
    pub assistance_threshold: f64,
    pub assistance_keywords: Vec<String>,
    pub max_regenerations: u32,
    pub forced_feedback_probability: f64,
    /// Rules with ε at or above this are treated as highly rigid.
    pub rigid_cutoff: f64,
    /// Wall-clock budget for one turn; once spent the loop behaves as if the
    /// regeneration budget were exhausted.
    pub turn_deadline_ms: u64,
    pub base_system_prompt: String,
    /// Must fit in a signed 64-bit integer to survive a TOML round trip.
    pub rng_seed: u64,
    pub embedding_dim: usize,
    pub base_provider: ProviderDescriptor,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observer_provider: Option<ProviderDescriptor>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_provider: Option<EmbeddingDescriptor>,
    pub scoring: ScoringBins,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            tone_weights: ToneWeights::default(),
            brevity_limit_tokens: 60,
            specificity_max_counts: SpecificityMax::default(),
            tone_acceptable_range: [-0.5, 1.0],
            coherence_threshold: 4.1,
            coherence_reference: CoherenceReference::default(),
            assistance_threshold: 0.5,
            assistance_keywords: default_keywords(),
            max_regenerations: 3,
            forced_feedback_probability: 0.25,
            rigid_cutoff: 0.8,
            turn_deadline_ms: 20_000,
            base_system_prompt: DEFAULT_SYSTEM_PROMPT.to_string(),
            rng_seed: 0,
            embedding_dim: 64,
            base_provider: ProviderDescriptor::default(),
            observer_provider: None,
            embedding_provider: None,
            scoring: ScoringBins::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.tone_weights.validate()?;
        if self.brevity_limit_tokens == 0 {
            return Err(invalid("brevity_limit_tokens", "must be positive"));
        }
        if self.specificity_max_counts.max_entities == 0 {
            return Err(invalid("specificity_max_counts.max_entities", "must be positive"));
        }
        if self.specificity_max_counts.max_descriptive == 0 {
            return Err(invalid(
                "specificity_max_counts.max_descriptive",
                "must be positive",
            ));
        }
        let [lo, hi] = self.tone_acceptable_range;
        if !(-1.0..=1.0).contains(&lo) || !(-1.0..=1.0).contains(&hi) || lo > hi {
            return Err(invalid(
                "tone_acceptable_range",
                format!("[{lo}, {hi}] must be an ordered sub-range of [-1, 1]"),
            ));
        }
        if !(self.coherence_threshold.is_finite() && self.coherence_threshold >= 0.0) {
            return Err(invalid("coherence_threshold", "must be finite and nonnegative"));
        }
        check_unit("assistance_threshold", self.assistance_threshold)?;
        if self.assistance_keywords.is_empty() {
            return Err(invalid("assistance_keywords", "must not be empty"));
        }
        if self.max_regenerations == 0 {
            return Err(invalid("max_regenerations", "must be at least 1"));
        }
        check_unit("forced_feedback_probability", self.forced_feedback_probability)?;
        check_unit("rigid_cutoff", self.rigid_cutoff)?;
        if self.turn_deadline_ms == 0 {
            return Err(invalid("turn_deadline_ms", "must be positive"));
        }
        if self.rng_seed > i64::MAX as u64 {
            return Err(invalid("rng_seed", "must fit in a signed 64-bit integer"));
        }
        if self.embedding_dim == 0 {
            return Err(invalid("embedding_dim", "must be positive"));
        }
        self.base_provider.validate("base_provider")?;
        if let Some(p) = &self.observer_provider {
            p.validate("observer_provider")?;
        }
        if let Some(p) = &self.embedding_provider {
            p.validate("embedding_provider")?;
        }
        self.scoring.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("engine config serializes")
    }

    /// Applies a JSON merge patch (objects merge recursively, everything else
    /// replaces) and validates the result. `self` is left untouched.
    pub fn merged(&self, patch: &serde_json::Value) -> Result<EngineConfig, ConfigError> {
        let mut doc = serde_json::to_value(self).expect("engine config serializes");
        merge_json(&mut doc, patch);
        let merged: EngineConfig =
            serde_json::from_value(doc).map_err(|e| ConfigError::Parse(e.to_string()))?;
        merged.validate()?;
        Ok(merged)
    }
}

pub(crate) fn merge_json(target: &mut serde_json::Value, patch: &serde_json::Value) {
    use serde_json::Value;
    match (target, patch) {
        (Value::Object(t), Value::Object(p)) => {
            for (k, v) in p {
                if v.is_null() {
                    t.remove(k);
                } else {
                    merge_json(t.entry(k.clone()).or_insert(Value::Null), v);
                }
            }
        }
        (t, p) => *t = p.clone(),
    }
}

/// Parses a TOML config document. Omitted keys take their defaults; the
/// result is validated and any violation names the offending key.
pub fn load_config(document: &str) -> Result<EngineConfig, ConfigError> {
    let config: EngineConfig =
        toml::from_str(document).map_err(|e| ConfigError::Parse(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// The bundled small-talk rule file, matching `default_rules` at default
/// thresholds.
pub const BUNDLED_RULES: &str = include_str!("../data/small_talk_rules.toml");

/// The small-talk overlay set derived from the thresholds in `config`.
pub fn default_rules(config: &EngineConfig) -> RuleSet {
    let rule = |id: &str,
                feature,
                comparator,
                threshold,
                rigidity,
                urgent_threshold,
                template: &str,
                priority| OverlayRule {
        id: id.into(),
        feature,
        comparator,
        threshold,
        rigidity,
        urgent_threshold,
        descriptor_template: template.into(),
        priority,
    };
    RuleSet::new(vec![
        rule(
            "coherence",
            Feature::Coherence,
            Comparator::AtMost,
            Threshold::Value(config.coherence_threshold),
            0.9,
            0.8,
            "{feature} gain is {value}, above the {threshold} limit; the reply drifts from the topic",
            1,
        ),
        rule(
            "brevity",
            Feature::Brevity,
            Comparator::AtMost,
            Threshold::Value(config.brevity_limit_tokens as f64),
            0.6,
            0.8,
            "{feature}: reply uses {value} tokens, limit {threshold}",
            2,
        ),
        rule(
            "tone",
            Feature::Tone,
            Comparator::WithinRange,
            Threshold::Range(config.tone_acceptable_range),
            0.5,
            0.8,
            "{feature} score is {value}, outside the acceptable range {threshold}",
            3,
        ),
        rule(
            "assistance",
            Feature::Assistance,
            Comparator::AtMost,
            Threshold::Value(config.assistance_threshold),
            0.5,
            0.8,
            "{feature} similarity is {value}, above {threshold}; the reply sounds like an assistant",
            4,
        ),
        rule(
            "specificity",
            Feature::Specificity,
            Comparator::AtMost,
            Threshold::Value(0.5),
            0.3,
            0.9,
            "{feature} is {value}, above {threshold}; the reply is too detailed",
            5,
        ),
    ])
    .expect("default rules are valid")
}
