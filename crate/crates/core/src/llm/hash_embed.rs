//! Desk-scale embedding fallback: hashed character n-gram bag features.
//! No model download, deterministic per text, and separable enough for
//! router training on keyword-distinct corpora.

use crate::llm::{BackendError, EmbedBackend, EmbeddingVector};

pub const DEFAULT_DIMENSION: usize = 256;
const NGRAM: usize = 3;

/// FNV-1a, hand-rolled so bucket assignment is stable across toolchains.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new()
    }
}

impl HashEmbedder {
    pub fn new() -> Self {
        Self { dimension: DEFAULT_DIMENSION }
    }

    /// Non-default dimensions are for small test fixtures; production use
    /// keeps [`DEFAULT_DIMENSION`].
    pub fn with_dimension(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }
}

impl EmbedBackend for HashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::EmptyInput("embed requires non-empty text".into()));
        }
        let lower = text.to_lowercase();
        let bytes = lower.as_bytes();
        let mut counts = vec![0.0f64; self.dimension];
        // Character trigrams over the raw text.
        if bytes.len() >= NGRAM {
            for window in bytes.windows(NGRAM) {
                let bucket = (fnv1a(window) % self.dimension as u64) as usize;
                counts[bucket] += 1.0;
            }
        }
        // Word unigrams, salted so they land in different buckets than
        // trigrams of the same bytes.
        for word in lower.split_whitespace() {
            let mut salted = Vec::with_capacity(word.len() + 1);
            salted.push(b'w');
            salted.extend_from_slice(word.as_bytes());
            let bucket = (fnv1a(&salted) % self.dimension as u64) as usize;
            counts[bucket] += 1.0;
        }
        let norm: f64 = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            for c in &mut counts {
                *c /= norm;
            }
        }
        Ok(EmbeddingVector(counts))
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn provider_id(&self) -> &str {
        "hash-ngram"
    }
}
