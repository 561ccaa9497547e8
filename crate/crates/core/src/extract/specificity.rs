use std::collections::HashSet;

use super::text::{raw_tokens, sentences, tokens};
use crate::config::SpecificityMax;

const BUNDLED_DESCRIPTIVE: &str = include_str!("../../data/descriptive_words.txt");

/// Counts named entities in a text.
pub trait EntityMatcher: Send + Sync {
    fn count_entities(&self, text: &str) -> usize;
}

/// Treats each run of capitalized tokens that does not open a sentence as one
/// entity. The pronoun "I" and its contractions are ignored.
#[derive(Debug, Clone, Copy, Default)]
pub struct CapitalizedRunMatcher;

fn is_pronoun_i(token: &str) -> bool {
    let lower = token.to_lowercase();
    lower == "i" || lower.starts_with("i'") || lower.starts_with("i\u{2019}")
}

impl EntityMatcher for CapitalizedRunMatcher {
    fn count_entities(&self, text: &str) -> usize {
        let mut count = 0;
        for sentence in sentences(text) {
            let mut in_run = false;
            for (i, tok) in raw_tokens(&sentence).enumerate() {
                let capitalized = tok.chars().next().is_some_and(char::is_uppercase);
                let entity_token = i > 0 && capitalized && !is_pronoun_i(tok);
                if entity_token && !in_run {
                    count += 1;
                }
                in_run = entity_token;
            }
        }
        count
    }
}

/// Adjectives and adverbs counted as descriptive words.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DescriptiveLexicon {
    words: HashSet<String>,
}

impl DescriptiveLexicon {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            words: words.into_iter().map(|w| w.as_ref().to_lowercase()).collect(),
        }
    }

    /// One word per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_DESCRIPTIVE)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(&token.to_lowercase())
    }

    pub fn count_in(&self, text: &str) -> usize {
        tokens(text).iter().filter(|t| self.words.contains(*t)).count()
    }
}

/// ½·min(1, entities/max_entities) + ½·min(1, descriptive/max_descriptive)
pub fn specificity(
    text: &str,
    matcher: &dyn EntityMatcher,
    descriptive: &DescriptiveLexicon,
    max: &SpecificityMax,
) -> f64 {
    let entities = matcher.count_entities(text) as f64;
    let described = descriptive.count_in(text) as f64;
    0.5 * (entities / max.max_entities as f64).min(1.0)
        + 0.5 * (described / max.max_descriptive as f64).min(1.0)
}
