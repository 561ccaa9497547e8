//! Feedback directives built from descriptors.
//!
//! Synthesis is template-based and deterministic. [`rewrite_with_model`] can
//! paraphrase a directive through an observer model; it is fail-open and
//! returns the template text whenever the paraphrase cannot be trusted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ChatMessage, ChatModel, ChatParams};
use crate::config::Feature;
use crate::overlay::Descriptor;

const BUNDLED_CLAUSES: &str = include_str!("../data/feedback_clauses.toml");

const REWRITE_PROMPT: &str = "You relay feedback to a conversational model. Rewrite the \
feedback below in your own words, addressed to that model. Keep every point, every rule \
name in parentheses, and any example verbatim. Reply with the rewritten feedback only.";

#[derive(Debug, Error, PartialEq)]
pub enum ObserverError {
    #[error("forced feedback needs at least one descriptor")]
    NoDescriptors,
    #[error("clause file: {0}")]
    Clauses(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectiveKind {
    Implicit,
    Forced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackDirective {
    pub kind: DirectiveKind,
    pub text: String,
    pub source_rule_ids: Vec<String>,
    /// Features the directive addresses, in first-mention order.
    pub topics: Vec<Feature>,
    pub includes_example: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Clause {
    pub implicit: String,
    pub forced: String,
    pub keywords: Vec<String>,
}

/// Per-feature advice wording.
#[derive(Debug, Clone, PartialEq)]
pub struct ClauseBook {
    clauses: BTreeMap<Feature, Clause>,
}

impl ClauseBook {
    pub fn parse(text: &str) -> Result<Self, ObserverError> {
        let clauses: BTreeMap<Feature, Clause> =
            toml::from_str(text).map_err(|e| ObserverError::Clauses(e.to_string()))?;
        if let Some(missing) = Feature::ALL.iter().find(|f| !clauses.contains_key(f)) {
            return Err(ObserverError::Clauses(format!("no clause for `{missing}`")));
        }
        Ok(Self { clauses })
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_CLAUSES).expect("bundled clauses are valid")
    }

    pub fn get(&self, feature: Feature) -> &Clause {
        &self.clauses[&feature]
    }
}

impl Default for ClauseBook {
    fn default() -> Self {
        Self::bundled()
    }
}

/// Descriptors grouped by feature, keeping first-appearance order.
fn by_feature(descriptors: &[Descriptor]) -> Vec<(Feature, Vec<&Descriptor>)> {
    let mut groups: Vec<(Feature, Vec<&Descriptor>)> = Vec::new();
    for d in descriptors {
        match groups.iter_mut().find(|(f, _)| *f == d.feature) {
            Some((_, ds)) => ds.push(d),
            None => groups.push((d.feature, vec![d])),
        }
    }
    groups
}

/// Advice for later turns; `None` when nothing was violated.
pub fn synthesize_implicit(
    descriptors: &[Descriptor],
    clauses: &ClauseBook,
) -> Option<FeedbackDirective> {
    if descriptors.is_empty() {
        return None;
    }
    let groups = by_feature(descriptors);
    let advice: Vec<&str> = groups
        .iter()
        .map(|(f, _)| clauses.get(*f).implicit.as_str())
        .collect();
    Some(FeedbackDirective {
        kind: DirectiveKind::Implicit,
        text: format!("For your next replies: {}", advice.join(" ")),
        source_rule_ids: descriptors.iter().map(|d| d.rule_id.clone()).collect(),
        topics: groups.iter().map(|(f, _)| *f).collect(),
        includes_example: false,
    })
}

/// An instruction to regenerate the current reply. Names every violated rule
/// and ends with the exemplar when one is given.
pub fn synthesize_forced(
    descriptors: &[Descriptor],
    exemplar: Option<&str>,
    clauses: &ClauseBook,
) -> Result<FeedbackDirective, ObserverError> {
    if descriptors.is_empty() {
        return Err(ObserverError::NoDescriptors);
    }
    let groups = by_feature(descriptors);
    let mut text = String::from("Your previous reply was rejected.");
    for (feature, ds) in &groups {
        let details: Vec<String> = ds
            .iter()
            .map(|d| format!("{}: {}", d.rule_id, d.text))
            .collect();
        text.push(' ');
        text.push_str(&clauses.get(*feature).forced);
        text.push_str(&format!(" ({})", details.join("; ")));
    }
    if let Some(ex) = exemplar {
        text.push_str(" For example, ");
        text.push_str(ex);
    }
    Ok(FeedbackDirective {
        kind: DirectiveKind::Forced,
        text,
        source_rule_ids: descriptors.iter().map(|d| d.rule_id.clone()).collect(),
        topics: groups.iter().map(|(f, _)| *f).collect(),
        includes_example: exemplar.is_some(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rewritten {
    pub directive: FeedbackDirective,
    pub warning: Option<String>,
}

/// Why a paraphrase cannot replace the original, if it cannot.
fn rewrite_problem(
    original: &FeedbackDirective,
    candidate: &str,
    clauses: &ClauseBook,
) -> Option<String> {
    let lower = candidate.to_lowercase();
    if lower.trim().is_empty() {
        return Some("observer returned empty text".into());
    }
    for topic in &original.topics {
        let kws = &clauses.get(*topic).keywords;
        if !kws.iter().any(|k| lower.contains(&k.to_lowercase())) {
            return Some(format!("observer rewrite dropped the {topic} point"));
        }
    }
    for id in &original.source_rule_ids {
        if original.text.contains(id.as_str()) && !candidate.contains(id.as_str()) {
            return Some(format!("observer rewrite dropped rule `{id}`"));
        }
    }
    None
}

/// Paraphrases `directive` through the observer model. Kind, rule ids and
/// topics are preserved; on a transport error or a paraphrase that loses a
/// rule mention the original directive comes back with a warning.
pub fn rewrite_with_model(
    directive: &FeedbackDirective,
    model: &dyn ChatModel,
    clauses: &ClauseBook,
) -> Rewritten {
    let messages = [
        ChatMessage::system(REWRITE_PROMPT),
        ChatMessage::user(directive.text.clone()),
    ];
    let params = ChatParams {
        temperature: Some(0.0),
        max_tokens: None,
    };
    let fallback = |warning: String| Rewritten {
        directive: directive.clone(),
        warning: Some(warning),
    };
    match model.complete(&messages, &params) {
        Err(e) => fallback(format!("observer rewrite failed: {e}")),
        Ok(text) => match rewrite_problem(directive, &text, clauses) {
            Some(problem) => fallback(problem),
            None => Rewritten {
                directive: FeedbackDirective {
                    text: text.trim().to_string(),
                    ..directive.clone()
                },
                warning: None,
            },
        },
    }
}
