//! Embedding and exact top-k retrieval over knowledge fragments.
//!
//! Vector math is generic over the scalar type (`f32`/`f64` via
//! `num_traits::Float`); the crate root exports concrete aliases. The index
//! is exact: every query is scored against every fragment and sorted, which
//! is trivially fast at KB scale (dozens to hundreds of fragments).

use std::path::Path;

use num_traits::Float;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::KnowledgeFragment;

pub const INDEX_SCHEMA: &str = "primod-index/1";
pub const DEFAULT_OFFLINE_DIMENSION: usize = 256;
pub const DEFAULT_TOP_K: usize = 7;

/// A fixed-dimension embedding. All components finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector<F> {
    pub components: Vec<F>,
}

impl<F: Float> EmbeddingVector<F> {
    pub fn dimension(&self) -> usize {
        self.components.len()
    }
}

/// Cosine similarity. Defined as 0 when either vector has zero norm
/// (possible for all-stopword queries under the offline embedder).
pub fn cosine_similarity<F: Float>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = F::zero();
    let mut na = F::zero();
    let mut nb = F::zero();
    for (x, y) in a.iter().zip(b) {
        dot = dot + *x * *y;
        na = na + *x * *x;
        nb = nb + *y * *y;
    }
    if na == F::zero() || nb == F::zero() {
        return F::zero();
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("embedding response malformed: {0}")]
    MalformedResponse(String),
}

/// Behavioral contract for embedding providers: deterministic per
/// fingerprint, fixed dimension.
pub trait Embedder<F: Float> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector<F>, EmbedError>;
    /// Identifies the provider and configuration that produced the vectors.
    fn fingerprint(&self) -> String;
}

/// Offline deterministic fallback embedder: hashed bag of words.
///
/// Rule (reimplementable independently):
/// 1. Lowercase the text and split it into maximal alphanumeric runs.
/// 2. For each token, compute `h1` = FNV-1a 64-bit over the token's UTF-8
///    bytes; the bucket is `h1 mod D`.
/// 3. Compute `h2` = FNV-1a 64-bit over the token's bytes followed by one
///    extra byte `0x01`; the sign is +1 if `h2` is even, -1 if odd.
/// 4. Add the sign into the bucket, then L2-normalize the vector.
#[derive(Debug, Clone)]
pub struct OfflineHashEmbedder {
    pub dimension: usize,
}

impl Default for OfflineHashEmbedder {
    fn default() -> Self {
        OfflineHashEmbedder {
            dimension: DEFAULT_OFFLINE_DIMENSION,
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

impl<F: Float> Embedder<F> for OfflineHashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector<F>, EmbedError> {
        if text.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut components = vec![F::zero(); self.dimension];
        let lower = text.to_lowercase();
        for token in lower.split(|c: char| !c.is_alphanumeric()) {
            if token.is_empty() {
                continue;
            }
            let bytes = token.as_bytes();
            let bucket = (fnv1a64(bytes) % self.dimension as u64) as usize;
            let mut signed = bytes.to_vec();
            signed.push(0x01);
            let sign = if fnv1a64(&signed) % 2 == 0 {
                F::one()
            } else {
                -F::one()
            };
            components[bucket] = components[bucket] + sign;
        }
        let norm = components
            .iter()
            .fold(F::zero(), |acc, x| acc + *x * *x)
            .sqrt();
        if norm > F::zero() {
            for x in &mut components {
                *x = *x / norm;
            }
        }
        Ok(EmbeddingVector { components })
    }

    fn fingerprint(&self) -> String {
        format!("offline-hash-v1/d{}", self.dimension)
    }
}

/// Embedder backed by a remote HTTP endpoint.
/// Request: `POST {url}` with JSON body `{"model": ..., "input": ...}`.
/// Response: JSON containing a numeric array at `field_path`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    pub endpoint_url: String,
    pub model_name: String,
    /// Path of keys to the numeric array in the response JSON.
    pub field_path: Vec<String>,
    pub timeout: std::time::Duration,
}

impl RemoteEmbedder {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        RemoteEmbedder {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            field_path: vec!["embedding".to_string()],
            timeout: std::time::Duration::from_secs(60),
        }
    }
}

impl<F: Float> Embedder<F> for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector<F>, EmbedError> {
        if text.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let body = serde_json::json!({ "model": self.model_name, "input": text });
        let response = ureq::post(&self.endpoint_url)
            .timeout(self.timeout)
            .send_json(body)
            .map_err(|e| EmbedError::ProviderUnavailable(e.to_string()))?;
        let value: serde_json::Value = response
            .into_json()
            .map_err(|e| EmbedError::MalformedResponse(e.to_string()))?;
        let mut cursor = &value;
        for key in &self.field_path {
            cursor = cursor.get(key).ok_or_else(|| {
                EmbedError::MalformedResponse(format!("missing field `{key}` in response"))
            })?;
        }
        let array = cursor
            .as_array()
            .ok_or_else(|| EmbedError::MalformedResponse("field is not an array".into()))?;
        let mut components = Vec::with_capacity(array.len());
        for v in array {
            let x = v
                .as_f64()
                .ok_or_else(|| EmbedError::MalformedResponse("non-numeric component".into()))?;
            let f = F::from(x)
                .filter(|f| f.is_finite())
                .ok_or_else(|| EmbedError::MalformedResponse("non-finite component".into()))?;
            components.push(f);
        }
        Ok(EmbeddingVector { components })
    }

    fn fingerprint(&self) -> String {
        format!("remote/{}@{}", self.model_name, self.endpoint_url)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry<F> {
    pub fragment: KnowledgeFragment,
    pub vector: EmbeddingVector<F>,
}

/// Exact-search vector index over knowledge fragments. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Serialize", deserialize = "F: DeserializeOwned"))]
pub struct VectorIndex<F> {
    pub schema: String,
    pub embedder_fingerprint: String,
    pub dimension: usize,
    pub entries: Vec<IndexEntry<F>>,
}

/// A retrieval hit: fragment plus its cosine similarity to the query.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredFragment<F> {
    pub fragment: KnowledgeFragment,
    pub similarity: F,
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index from zero fragments")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("malformed index file {path}: {reason}")]
    MalformedFile { path: String, reason: String },
    #[error("index was built with embedder `{index}` but `{configured}` is configured")]
    FingerprintMismatch { index: String, configured: String },
}

/// Embed every fragment and build the index. Input order is preserved.
pub fn build_index<F: Float>(
    fragments: &[KnowledgeFragment],
    embedder: &dyn Embedder<F>,
) -> Result<VectorIndex<F>, IndexError> {
    if fragments.is_empty() {
        return Err(IndexError::Empty);
    }
    let mut entries = Vec::with_capacity(fragments.len());
    let mut dimension = None;
    for fragment in fragments {
        let vector = embedder.embed(&fragment.text)?;
        match dimension {
            None => dimension = Some(vector.dimension()),
            Some(d) if d != vector.dimension() => {
                return Err(IndexError::DimensionMismatch {
                    expected: d,
                    actual: vector.dimension(),
                })
            }
            _ => {}
        }
        entries.push(IndexEntry {
            fragment: fragment.clone(),
            vector,
        });
    }
    Ok(VectorIndex {
        schema: INDEX_SCHEMA.to_string(),
        embedder_fingerprint: embedder.fingerprint(),
        dimension: dimension.unwrap(),
        entries,
    })
}

/// The k entries most similar to the query, sorted by descending cosine
/// similarity, ties broken by ascending fragment_id. Returns all entries
/// when k exceeds the index size.
pub fn top_k<F: Float>(
    index: &VectorIndex<F>,
    query: &EmbeddingVector<F>,
    k: usize,
) -> Result<Vec<ScoredFragment<F>>, IndexError> {
    if query.dimension() != index.dimension {
        return Err(IndexError::DimensionMismatch {
            expected: index.dimension,
            actual: query.dimension(),
        });
    }
    let mut scored: Vec<ScoredFragment<F>> = index
        .entries
        .iter()
        .map(|e| ScoredFragment {
            fragment: e.fragment.clone(),
            similarity: cosine_similarity(&e.vector.components, &query.components),
        })
        .collect();
    scored.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.fragment.fragment_id.cmp(&b.fragment.fragment_id))
    });
    scored.truncate(k);
    Ok(scored)
}

impl<F: Float + Serialize + DeserializeOwned> VectorIndex<F> {
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let json = serde_json::to_string_pretty(self).expect("index serializes");
        std::fs::write(path, json).map_err(|e| IndexError::MalformedFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<VectorIndex<F>, IndexError> {
        let text = std::fs::read_to_string(path).map_err(|e| IndexError::MalformedFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let index: VectorIndex<F> =
            serde_json::from_str(&text).map_err(|e| IndexError::MalformedFile {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        if index.schema != INDEX_SCHEMA {
            return Err(IndexError::MalformedFile {
                path: path.display().to_string(),
                reason: format!("unsupported schema tag `{}`", index.schema),
            });
        }
        Ok(index)
    }

    /// Error when the index was produced by a different embedder config.
    pub fn check_fingerprint(&self, embedder: &dyn Embedder<F>) -> Result<(), IndexError> {
        let configured = embedder.fingerprint();
        if self.embedder_fingerprint != configured {
            return Err(IndexError::FingerprintMismatch {
                index: self.embedder_fingerprint.clone(),
                configured,
            });
        }
        Ok(())
    }
}
