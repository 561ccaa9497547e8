//! Token embeddings and the entropy / similarity measures built on them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::text::tokens;
use super::ExtractError;

pub const DEFAULT_EMBEDDING_SEED: u64 = 0x0b5e_7e5d;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Cosine similarity; 0 when either vector has zero norm.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return 0.0;
        }
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        (dot / denom).clamp(-1.0, 1.0)
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// One vector per token, deterministic for a fixed input.
    fn embed(&self, tokens: &[String]) -> Result<Vec<EmbeddingVector>, ExtractError>;

    /// Warnings raised since the last call (e.g. a remote fallback).
    fn take_warnings(&self) -> Vec<String> {
        Vec::new()
    }
}

/// Maps each token to a pseudo-random unit vector seeded by a hash of the
/// token. Identical tokens always share a vector; distinct tokens are nearly
/// orthogonal in high dimension.
#[derive(Debug, Clone)]
pub struct HashEmbedding {
    dim: usize,
    seed: u64,
}

impl HashEmbedding {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    pub fn embed_token(&self, token: &str) -> EmbeddingVector {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let raw: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        EmbeddingVector(raw.into_iter().map(|x| x / norm).collect())
    }
}

impl Default for HashEmbedding {
    fn default() -> Self {
        Self::new(64, DEFAULT_EMBEDDING_SEED)
    }
}

impl EmbeddingProvider for HashEmbedding {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, tokens: &[String]) -> Result<Vec<EmbeddingVector>, ExtractError> {
        Ok(tokens.iter().map(|t| self.embed_token(t)).collect())
    }
}

/// Mean over tokens of the Shannon entropy (nats) of a softmax over that
/// token's cosine similarities to every token in the response.
pub fn token_entropy(vectors: &[EmbeddingVector]) -> Result<f64, ExtractError> {
    if vectors.is_empty() {
        return Err(ExtractError::EmptyVectors);
    }
    let n = vectors.len();
    let norms: Vec<f64> = vectors.iter().map(EmbeddingVector::norm).collect();
    // Same arithmetic as `cosine`, filled symmetrically.
    let mut matrix = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let denom = norms[i] * norms[j];
            let c = if denom == 0.0 {
                0.0
            } else {
                let dot: f64 = vectors[i].0.iter().zip(&vectors[j].0).map(|(a, b)| a * b).sum();
                (dot / denom).clamp(-1.0, 1.0)
            };
            matrix[i * n + j] = c;
            matrix[j * n + i] = c;
        }
    }
    let mut total = 0.0;
    for sims in matrix.chunks(n) {
        let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = sims.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let h: f64 = exps
            .iter()
            .map(|e| e / z)
            .filter(|p| *p > 0.0)
            .map(|p| -p * p.ln())
            .sum();
        total += h;
    }
    Ok((total / n as f64).clamp(0.0, (n as f64).ln()))
}

/// |H(current) − H(previous)|.
pub fn coherence_gain(prev_entropy: f64, current: &[EmbeddingVector]) -> Result<f64, ExtractError> {
    Ok((token_entropy(current)? - prev_entropy).abs())
}

/// Largest non-negative cosine similarity between any response token and
/// any keyword.
pub fn assistance_similarity(
    text: &str,
    keywords: &[String],
    provider: &dyn EmbeddingProvider,
) -> Result<f64, ExtractError> {
    if keywords.is_empty() {
        return Err(ExtractError::EmptyKeywords);
    }
    let toks = tokens(text);
    if toks.is_empty() {
        return Ok(0.0);
    }
    let keywords: Vec<String> = keywords.iter().map(|k| k.to_lowercase()).collect();
    let tv = provider.embed(&toks)?;
    let kv = provider.embed(&keywords)?;
    let best = tv
        .iter()
        .flat_map(|t| kv.iter().map(move |k| t.cosine(k)))
        .fold(0.0f64, f64::max);
    Ok(best.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn keywords() -> Vec<String> {
        vec!["help".into(), "assist".into(), "information".into()]
    }

    #[test]
    fn hash_vectors_are_unit_and_stable() {
        let p = HashEmbedding::default();
        let a = p.embed_token("hello");
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert_eq!(a, p.embed_token("hello"));
        assert_eq!(a.dim(), 64);
        assert!(a.cosine(&p.embed_token("world")).abs() < 0.6);
    }

    #[test]
    fn entropy_edge_cases() {
        let p = HashEmbedding::default();
        assert!(matches!(token_entropy(&[]), Err(ExtractError::EmptyVectors)));
        let one = p.embed(&["x".into()]).unwrap();
        assert_eq!(token_entropy(&one).unwrap(), 0.0);
        for k in [2usize, 3, 7] {
            let same = p.embed(&vec!["x".to_string(); k]).unwrap();
            assert!((token_entropy(&same).unwrap() - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn gain_examples() {
        let p = HashEmbedding::default();
        let resp = p.embed(&tokens("we walked by the lake")).unwrap();
        let h = token_entropy(&resp).unwrap();
        assert_eq!(coherence_gain(h, &resp).unwrap(), 0.0);
        let three = p.embed(&vec!["a".to_string(); 3]).unwrap();
        assert!((coherence_gain(0.0, &three).unwrap() - 3f64.ln()).abs() < 1e-12);
        let single = p.embed(&["a".to_string()]).unwrap();
        assert!((coherence_gain(3f64.ln(), &single).unwrap() - 3f64.ln()).abs() < 1e-12);
        assert!(coherence_gain(0.0, &[]).is_err());
    }

    #[test]
    fn assistance_examples() {
        let p = HashEmbedding::default();
        assert_eq!(assistance_similarity("Happy to help!", &keywords(), &p).unwrap(), 1.0);
        assert_eq!(assistance_similarity("", &keywords(), &p).unwrap(), 0.0);
        assert!(matches!(
            assistance_similarity("hi", &[], &p),
            Err(ExtractError::EmptyKeywords)
        ));
    }

    #[test]
    fn sunset_stroll_golden() {
        // Frozen from the default provider (dim 64, DEFAULT_EMBEDDING_SEED) and
        // cross-checked against a numpy evaluation of the dumped vectors.
        let p = HashEmbedding::default();
        let v = assistance_similarity("sunset stroll", &keywords(), &p).unwrap();
        assert!((v - SUNSET_STROLL).abs() < 1e-12, "{v}");
        assert!(v < 0.5);
    }

    const SUNSET_STROLL: f64 = 0.068_764_916_694_809_4;

    proptest! {
        #[test]
        fn entropy_bounded_and_permutation_invariant(
            words in proptest::collection::vec("[a-e]{1,2}", 1..12),
            rot in 0usize..12,
        ) {
            let p = HashEmbedding::default();
            let v = p.embed(&words).unwrap();
            let h = token_entropy(&v).unwrap();
            prop_assert!(h >= 0.0 && h <= (words.len() as f64).ln() + 1e-12);
            let mut rotated = v.clone();
            rotated.rotate_left(rot % words.len());
            rotated.reverse();
            prop_assert!((token_entropy(&rotated).unwrap() - h).abs() < 1e-12);
        }
    }
}
