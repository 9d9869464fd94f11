//! Deterministic feature-hashing embeddings and an exact top-k cosine
//! index.
//!
//! Word unigrams and bigrams are hashed into a fixed number of signed
//! buckets and L2-normalized, so identical text always embeds to the same
//! vector with no model dependency. Retrieval is an exact scan — desk-scale
//! indices make approximation unnecessary and exactness testable against a
//! brute-force oracle.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::ItemId;
use crate::time::Timestamp;

pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("text is empty after normalization")]
    EmptyText,
    #[error("vector dimension {got} does not match index dimension {want}")]
    DimensionMismatch { got: usize, want: usize },
}

/// A unit-norm embedding of fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f32 {
        dot(&self.values, &other.values)
    }
}

/// Sequential f32 dot product; unit-norm inputs make this the cosine.
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut sum = 0.0f32;
    for (x, y) in a.iter().zip(b.iter()) {
        sum += x * y;
    }
    sum.clamp(-1.0, 1.0)
}

/// FNV-1a, the stable token hash behind the signed feature buckets.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Embeds text deterministically: lowercase, collapse whitespace, hash word
/// unigrams and bigrams into `dim` signed buckets, then L2-normalize.
pub fn embed_with_dim(text: &str, dim: usize) -> Result<EmbeddingVector, RetrievalError> {
    let normalized = text.to_lowercase();
    let tokens: Vec<&str> = normalized
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.is_empty() {
        return Err(RetrievalError::EmptyText);
    }
    let mut values = vec![0.0f32; dim];
    let mut add = |feature: &str| {
        let h = fnv1a(feature.as_bytes());
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        values[bucket] += sign;
    };
    for token in &tokens {
        add(token);
    }
    for pair in tokens.windows(2) {
        add(&format!("{} {}", pair[0], pair[1]));
    }
    let norm = values.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v = (*v as f64 / norm) as f32;
        }
    }
    Ok(EmbeddingVector { values })
}

pub fn embed(text: &str) -> Result<EmbeddingVector, RetrievalError> {
    embed_with_dim(text, DEFAULT_DIM)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    ProfileItem,
    Summary,
    Guideline,
    PriorOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub vector: EmbeddingVector,
    pub kind: ItemKind,
    pub updated_at: Timestamp,
}

/// Exact-scan vector index. Upserts go through a single writer; reads take
/// an immutable view.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VectorIndex {
    pub entries: BTreeMap<ItemId, IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceHit {
    pub id: ItemId,
    pub score: f32,
    pub kind: ItemKind,
}

/// Ordered retrieval results; scores non-increasing, at most `k` hits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub hits: Vec<EvidenceHit>,
    pub k: usize,
}

impl EvidenceSet {
    pub fn ids(&self) -> Vec<ItemId> {
        self.hits.iter().map(|h| h.id.clone()).collect()
    }
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts or replaces an entry, refreshing `updated_at`.
    pub fn upsert(
        &mut self,
        id: ItemId,
        text: &str,
        kind: ItemKind,
        updated_at: Timestamp,
    ) -> Result<(), RetrievalError> {
        let vector = embed(text)?;
        self.upsert_vector(id, vector, kind, updated_at)
    }

    pub fn upsert_vector(
        &mut self,
        id: ItemId,
        vector: EmbeddingVector,
        kind: ItemKind,
        updated_at: Timestamp,
    ) -> Result<(), RetrievalError> {
        if let Some(existing) = self.entries.values().next() {
            if existing.vector.dim() != vector.dim() {
                return Err(RetrievalError::DimensionMismatch {
                    got: vector.dim(),
                    want: existing.vector.dim(),
                });
            }
        }
        self.entries.insert(
            id,
            IndexEntry {
                vector,
                kind,
                updated_at,
            },
        );
        Ok(())
    }

    /// Removes an entry; removing an unknown id is a no-op returning false.
    pub fn remove(&mut self, id: &ItemId) -> bool {
        self.entries.remove(id).is_some()
    }

    /// Exact top-k by cosine over entries passing the kind filter. Ties
    /// break by `updated_at` (most recent first), then id.
    pub fn retrieve_top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
        filter: Option<&BTreeSet<ItemKind>>,
        recency_tiebreak: bool,
    ) -> EvidenceSet {
        let mut scored: Vec<(&ItemId, &IndexEntry, f32)> = self
            .entries
            .iter()
            .filter(|(_, entry)| filter.map_or(true, |kinds| kinds.contains(&entry.kind)))
            .map(|(id, entry)| (id, entry, entry.vector.cosine(query)))
            .collect();
        scored.sort_by(|(a_id, a_entry, a_score), (b_id, b_entry, b_score)| {
            b_score
                .partial_cmp(a_score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| {
                    if recency_tiebreak {
                        b_entry.updated_at.cmp(&a_entry.updated_at)
                    } else {
                        std::cmp::Ordering::Equal
                    }
                })
                .then_with(|| a_id.cmp(b_id))
        });
        EvidenceSet {
            hits: scored
                .into_iter()
                .take(k)
                .map(|(id, entry, score)| EvidenceHit {
                    id: id.clone(),
                    score,
                    kind: entry.kind,
                })
                .collect(),
            k,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("index serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    /// Serializes and seals the index as one binary blob.
    pub fn seal(
        &self,
        keyring: &mut crate::vault::KeyRing,
        blob_id: &str,
    ) -> Result<crate::vault::SealedRecord, crate::vault::VaultError> {
        let bytes = bincode::serialize(self).expect("index serializes");
        keyring.seal(blob_id, 1, &bytes)
    }

    pub fn unseal(
        keyring: &crate::vault::KeyRing,
        record: &crate::vault::SealedRecord,
    ) -> Result<Self, crate::vault::VaultError> {
        let bytes = keyring.unseal(record)?;
        bincode::deserialize(&bytes).map_err(|e| crate::vault::VaultError::Corrupt {
            path: record.record_id.clone(),
            message: e.to_string(),
        })
    }
}
