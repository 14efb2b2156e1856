//! Embedding providers and vector similarity.
//!
//! Layout:
//!
//! ```text
//! mod.rs    vector type, similarity metrics, Embedder trait, offline provider
//! cache.rs  persistent content-hash cache wrapping any provider
//! remote.rs OpenAI-compatible embeddings endpoint client
//! ```
//!
//! The offline provider is a deterministic test double: lowercase the text,
//! split on runs of non-alphanumeric characters, hash each token with FNV-1a
//! (64 bit) and bump the counter at `hash % dim`. Because a vector is just a
//! bag of token counts, concatenating two texts with a space adds their
//! vectors entrywise. That additivity is what makes poisons that embed the
//! query text provably retrievable: dot(E(q), E(q + " " + h)) >= dot(E(q), E(q)).

pub mod cache;
pub mod remote;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite, non-empty embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArg(
                "embedding must have at least one dimension".to_string(),
            ));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEmbedding { index });
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    fn l2_norm(&self) -> f64 {
        self.0
            .iter()
            .map(|v| f64::from(*v) * f64::from(*v))
            .sum::<f64>()
            .sqrt()
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = Error;

    fn try_from(values: Vec<f32>) -> Result<Self> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Vec<f32> {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    #[default]
    DotProduct,
    Cosine,
}

impl FromStr for SimilarityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dot" | "dot_product" | "dot-product" => Ok(SimilarityMetric::DotProduct),
            "cosine" => Ok(SimilarityMetric::Cosine),
            other => Err(Error::InvalidArg(format!(
                "unknown similarity metric \"{other}\" (expected \"dot\" or \"cosine\")"
            ))),
        }
    }
}

impl fmt::Display for SimilarityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimilarityMetric::DotProduct => write!(f, "dot"),
            SimilarityMetric::Cosine => write!(f, "cosine"),
        }
    }
}

/// Similarity score between two vectors of equal dimension. Accumulates in
/// f64. Cosine on a zero-magnitude vector is an error, never a silent 0.
pub fn similarity(a: &EmbeddingVector, b: &EmbeddingVector, metric: SimilarityMetric) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let dot: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum();
    match metric {
        SimilarityMetric::DotProduct => Ok(dot),
        SimilarityMetric::Cosine => {
            let (na, nb) = (a.l2_norm(), b.l2_norm());
            if na == 0.0 || nb == 0.0 {
                return Err(Error::ZeroVector {
                    operation: "cosine similarity",
                });
            }
            Ok(dot / (na * nb))
        }
    }
}

pub trait Embedder: Send + Sync {
    /// Stable provider identifier, part of every cache key.
    fn provider_id(&self) -> &str;

    /// Stable model identifier, part of every cache key.
    fn model_id(&self) -> &str;

    /// Output dimension; constant for the lifetime of the provider.
    fn dim(&self) -> usize;

    /// Embeds one text. The text must be non-empty after trimming.
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;

    /// Embeds a batch, output order matching input order.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

pub const DEFAULT_OFFLINE_DIM: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a64(data: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for byte in data {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Deterministic bag-of-tokens embedder; the offline stand-in for a real
/// embedding model.
#[derive(Debug, Clone)]
pub struct OfflineEmbedder {
    dim: usize,
    model_id: String,
}

impl OfflineEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArg(
                "embedding dimension must be at least 1".to_string(),
            ));
        }
        Ok(OfflineEmbedder {
            dim,
            model_id: format!("fnv1a64-bag-d{dim}"),
        })
    }

    fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
        text.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect::<Vec<_>>()
            .into_iter()
    }
}

impl Default for OfflineEmbedder {
    fn default() -> Self {
        OfflineEmbedder::new(DEFAULT_OFFLINE_DIM).expect("default dim is positive")
    }
}

impl Embedder for OfflineEmbedder {
    fn provider_id(&self) -> &str {
        "offline"
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        let mut values = vec![0.0f32; self.dim];
        for token in Self::tokens(text) {
            let index = (fnv1a64(token.as_bytes()) % self.dim as u64) as usize;
            values[index] += 1.0;
        }
        EmbeddingVector::new(values)
    }
}

/// Wraps a provider and L2-normalizes every vector it produces. Off by
/// default in run configs; cosine and dot product coincide when it is on.
pub struct L2Normalized<E> {
    inner: E,
    provider_id: String,
}

impl<E: Embedder> L2Normalized<E> {
    pub fn new(inner: E) -> Self {
        let provider_id = format!("{}+l2", inner.provider_id());
        L2Normalized { inner, provider_id }
    }
}

impl<E: Embedder> Embedder for L2Normalized<E> {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let raw = self.inner.embed(text)?;
        let norm = raw.l2_norm();
        if norm == 0.0 {
            return Err(Error::ZeroVector {
                operation: "l2 normalization",
            });
        }
        let values = raw.values().iter().map(|v| (f64::from(*v) / norm) as f32).collect();
        EmbeddingVector::new(values)
    }
}

/// Wraps a provider so every embedding call is counted against a cost
/// ledger. Input tokens are whitespace words; embeddings produce no output
/// tokens.
pub struct Metered<E> {
    inner: E,
    ledger: std::sync::Arc<crate::generator::CostLedger>,
}

impl<E: Embedder> Metered<E> {
    pub fn new(inner: E, ledger: std::sync::Arc<crate::generator::CostLedger>) -> Self {
        Metered { inner, ledger }
    }
}

impl<E: Embedder> Embedder for Metered<E> {
    fn provider_id(&self) -> &str {
        self.inner.provider_id()
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        self.ledger.begin_call()?;
        let vector = self.inner.embed(text)?;
        self.ledger.charge(&crate::generator::TokenUsage {
            input_tokens: crate::generator::whitespace_tokens(text),
            output_tokens: 0,
        });
        Ok(vector)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        self.ledger.begin_call()?;
        let vectors = self.inner.embed_batch(texts)?;
        let words: u64 = texts.iter().map(|t| crate::generator::whitespace_tokens(t)).sum();
        self.ledger.charge(&crate::generator::TokenUsage {
            input_tokens: words,
            output_tokens: 0,
        });
        Ok(vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn embed(text: &str) -> EmbeddingVector {
        OfflineEmbedder::default().embed(text).unwrap()
    }

    #[test]
    fn fnv1a64_matches_reference_values() {
        // Cross-checked against an independent implementation of the
        // parameters 0xcbf29ce484222325 / 0x100000001b3.
        assert_eq!(fnv1a64(b"the"), 6266135566914540924);
        assert_eq!(fnv1a64(b"what"), 11234446932156269327);
        assert_eq!(fnv1a64(b"century"), 6091881021393328599);
    }

    #[test]
    fn repeated_token_counts_accumulate() {
        let v = embed("the the");
        let sum: f32 = v.values().iter().sum();
        assert_eq!(sum, 2.0);
        // 6266135566914540924 % 256 == 124
        assert_eq!(v.values()[124], 2.0);
        assert_eq!(v.values().iter().filter(|x| **x != 0.0).count(), 1);
    }

    #[test]
    fn tokenization_is_case_and_punctuation_insensitive() {
        assert_eq!(embed("Hello, WORLD!"), embed("hello world"));
        assert_eq!(embed("a-b"), embed("a b"));
    }

    #[test]
    fn known_question_lands_on_frozen_indices() {
        let v = embed("What century do we live in?");
        let nonzero: Vec<usize> = v
            .values()
            .iter()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(nonzero, vec![15, 143, 148, 169, 190, 215]);
        assert_eq!(similarity(&v, &v, SimilarityMetric::DotProduct).unwrap(), 6.0);
    }

    #[test]
    fn empty_text_is_rejected() {
        let embedder = OfflineEmbedder::default();
        assert!(matches!(embedder.embed(""), Err(Error::EmptyText)));
        assert!(matches!(embedder.embed("   \t"), Err(Error::EmptyText)));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = OfflineEmbedder::new(16).unwrap().embed("x").unwrap();
        let b = OfflineEmbedder::new(32).unwrap().embed("x").unwrap();
        let err = similarity(&a, &b, SimilarityMetric::DotProduct).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                left: 16,
                right: 32
            }
        ));
    }

    #[test]
    fn cosine_on_zero_vector_is_an_error_but_dot_is_zero() {
        // "!!!" has no alphanumeric tokens, so it embeds to all zeros.
        let zero = embed("!!!");
        let other = embed("hello");
        let err = similarity(&zero, &other, SimilarityMetric::Cosine).unwrap_err();
        assert!(matches!(
            err,
            Error::ZeroVector {
                operation: "cosine similarity"
            }
        ));
        let dot = similarity(&zero, &other, SimilarityMetric::DotProduct).unwrap();
        assert_eq!(dot, 0.0);
    }

    #[test]
    fn cosine_of_vector_with_itself_is_one() {
        let v = embed("retrieval augmented generation");
        let c = similarity(&v, &v, SimilarityMetric::Cosine).unwrap();
        assert!((c - 1.0).abs() < 1e-9);
    }

    #[test]
    fn batch_preserves_input_order() {
        let embedder = OfflineEmbedder::default();
        let texts = ["alpha", "beta", "gamma"];
        let batch = embedder.embed_batch(&texts).unwrap();
        for (text, vector) in texts.iter().zip(&batch) {
            assert_eq!(vector, &embedder.embed(text).unwrap());
        }
    }

    #[test]
    fn concatenation_with_space_adds_vectors() {
        let (a, b) = (embed("what century"), embed("the 19th century"));
        let joined = embed("what century the 19th century");
        for i in 0..a.dim() {
            assert_eq!(joined.values()[i], a.values()[i] + b.values()[i]);
        }
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let err = EmbeddingVector::new(vec![1.0, f32::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteEmbedding { index: 1 }));
        assert!(EmbeddingVector::new(vec![]).is_err());
    }

    #[test]
    fn metered_embedder_counts_calls_and_words_against_the_ledger() {
        use std::sync::Arc;
        let ledger = Arc::new(crate::generator::CostLedger::unlimited());
        let embedder = Metered::new(OfflineEmbedder::default(), Arc::clone(&ledger));
        embedder.embed("three word text").unwrap();
        embedder.embed_batch(&["one", "two words"]).unwrap();
        assert_eq!(ledger.calls(), 2);
        assert_eq!(ledger.input_tokens(), 6);
        assert_eq!(ledger.output_tokens(), 0);

        let broke = Arc::new(crate::generator::CostLedger::with_budget(
            crate::generator::SpendBudget {
                max_provider_calls: Some(0),
                max_spend: None,
            },
        ));
        let gated = Metered::new(OfflineEmbedder::default(), broke);
        assert!(matches!(
            gated.embed("text"),
            Err(Error::BudgetExhausted(_))
        ));
    }

    #[test]
    fn l2_normalized_vectors_have_unit_norm() {
        let embedder = L2Normalized::new(OfflineEmbedder::default());
        let v = embedder.embed("some words here").unwrap();
        let norm: f64 = v.values().iter().map(|x| f64::from(*x) * f64::from(*x)).sum();
        assert!((norm.sqrt() - 1.0).abs() < 1e-6);
        assert_eq!(embedder.provider_id(), "offline+l2");
        assert!(matches!(
            embedder.embed("!!!"),
            Err(Error::ZeroVector { .. })
        ));
    }

    proptest! {
        #[test]
        fn additivity_over_space_joins(
            s1 in "[a-zA-Z0-9 ,.!?-]{1,40}",
            s2 in "[a-zA-Z0-9 ,.!?-]{1,40}",
        ) {
            prop_assume!(!s1.trim().is_empty() && !s2.trim().is_empty());
            let embedder = OfflineEmbedder::default();
            let joined = embedder.embed(&format!("{s1} {s2}")).unwrap();
            let (a, b) = (embedder.embed(&s1).unwrap(), embedder.embed(&s2).unwrap());
            for i in 0..joined.dim() {
                prop_assert_eq!(joined.values()[i], a.values()[i] + b.values()[i]);
            }
        }

        #[test]
        fn similarity_is_symmetric(
            s1 in "[a-z ]{1,30}",
            s2 in "[a-z ]{1,30}",
        ) {
            prop_assume!(!s1.trim().is_empty() && !s2.trim().is_empty());
            let embedder = OfflineEmbedder::new(16).unwrap();
            let (a, b) = (embedder.embed(&s1).unwrap(), embedder.embed(&s2).unwrap());
            let d1 = similarity(&a, &b, SimilarityMetric::DotProduct).unwrap();
            let d2 = similarity(&b, &a, SimilarityMetric::DotProduct).unwrap();
            prop_assert_eq!(d1, d2);
            if let (Ok(c1), Ok(c2)) = (
                similarity(&a, &b, SimilarityMetric::Cosine),
                similarity(&b, &a, SimilarityMetric::Cosine),
            ) {
                prop_assert_eq!(c1, c2);
                prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&c1));
            }
        }
    }
}
