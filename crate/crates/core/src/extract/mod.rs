//! Feature extractors: turn a candidate reply and its context into a
//! [`FeatureVector`].
//!
//! Every extractor is a pure function of its inputs and the pluggable
//! providers bundled in [`Extractors`].

mod embedding;
mod sentiment;
mod specificity;
mod text;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embedding::{
    assistance_similarity, coherence_gain, token_entropy, EmbeddingProvider, EmbeddingVector,
    HashEmbedding, DEFAULT_EMBEDDING_SEED,
};
pub use sentiment::{combined_tone, sentiment_score, SentimentLexicon, ToneScore};
pub use specificity::{specificity, CapitalizedRunMatcher, DescriptiveLexicon, EntityMatcher};
pub use text::{count_completion_tokens, segment, Segmented, Tokenizer, WordTokenizer};

use crate::config::{EngineConfig, Feature};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("token entropy needs at least one vector")]
    EmptyVectors,
    #[error("assistance keyword list is empty")]
    EmptyKeywords,
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("embedding provider: {0}")]
    Embedding(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub brevity_tokens: usize,
    pub tone: ToneScore,
    pub specificity: f64,
    /// Token entropy of this reply, kept so the next turn can measure gain.
    pub entropy: f64,
    pub coherence_gain: f64,
    pub assistance_similarity: f64,
}

impl FeatureVector {
    /// The scalar an overlay rule on `feature` compares.
    pub fn value(&self, feature: Feature) -> f64 {
        match feature {
            Feature::Brevity => self.brevity_tokens as f64,
            Feature::Tone => self.tone.combined,
            Feature::Specificity => self.specificity,
            Feature::Coherence => self.coherence_gain,
            Feature::Assistance => self.assistance_similarity,
        }
    }
}

/// The pluggable pieces the extractors need.
#[derive(Clone)]
pub struct Extractors {
    pub tokenizer: Arc<dyn Tokenizer>,
    pub lexicon: Arc<SentimentLexicon>,
    pub descriptive: Arc<DescriptiveLexicon>,
    pub entities: Arc<dyn EntityMatcher>,
    pub embedder: Arc<dyn EmbeddingProvider>,
}

impl Extractors {
    /// Bundled lexica, word tokenizer, capitalization entity heuristic and the
    /// hash embedding at `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        Self {
            tokenizer: Arc::new(WordTokenizer),
            lexicon: Arc::new(SentimentLexicon::bundled()),
            descriptive: Arc::new(DescriptiveLexicon::bundled()),
            entities: Arc::new(CapitalizedRunMatcher),
            embedder: Arc::new(HashEmbedding::new(dim, DEFAULT_EMBEDDING_SEED)),
        }
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn EmbeddingProvider>) -> Self {
        self.embedder = embedder;
        self
    }

    /// Token entropy of `text`, 0 for text without tokens.
    pub fn entropy_of(&self, text: &str) -> Result<f64, ExtractError> {
        let toks = segment(text).tokens;
        if toks.is_empty() {
            return Ok(0.0);
        }
        token_entropy(&self.embedder.embed(&toks)?)
    }
}

impl Default for Extractors {
    fn default() -> Self {
        Self::standard(64)
    }
}

/// Runs all five extractors. `reference` is the earlier turn coherence is
/// measured against (none on the first agent turn).
pub fn extract_all(
    response: &str,
    reference: Option<&str>,
    config: &EngineConfig,
    ex: &Extractors,
) -> Result<FeatureVector, ExtractError> {
    let prev_entropy = match reference {
        Some(r) => ex.entropy_of(r)?,
        None => 0.0,
    };
    extract_with_prev(response, prev_entropy, config, ex)
}

/// [`extract_all`] with the reference entropy already known.
pub fn extract_with_prev(
    response: &str,
    prev_entropy: f64,
    config: &EngineConfig,
    ex: &Extractors,
) -> Result<FeatureVector, ExtractError> {
    let entropy = ex.entropy_of(response)?;
    Ok(FeatureVector {
        brevity_tokens: count_completion_tokens(response, ex.tokenizer.as_ref()),
        tone: combined_tone(response, &ex.lexicon, &config.tone_weights),
        specificity: specificity(
            response,
            ex.entities.as_ref(),
            &ex.descriptive,
            &config.specificity_max_counts,
        ),
        entropy,
        coherence_gain: (entropy - prev_entropy).abs(),
        assistance_similarity: assistance_similarity(
            response,
            &config.assistance_keywords,
            ex.embedder.as_ref(),
        )?,
    })
}
