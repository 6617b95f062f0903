//! Cosine re-ranking of session-model top-k lists against a summary
//! embedding.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::catalog::CatalogSnapshot;
use crate::digest::sha256_hex;
use crate::models::{RankedPredictions, ScoredItem};
use crate::summarizer::KeywordSummary;

pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum RerankError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("embedding provider returned an invalid vector: {0}")]
    InvalidVector(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector { values: vec![0.0; dim] }
    }

    /// Scales to unit length; a zero vector stays zero.
    pub fn normalized(values: Vec<f64>) -> Result<Self, RerankError> {
        if values.is_empty() {
            return Err(RerankError::InvalidVector("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RerankError::InvalidVector("non-finite component".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let values = if norm > 0.0 { values.into_iter().map(|v| v / norm).collect() } else { values };
        Ok(EmbeddingVector { values })
    }

    /// Wraps raw components without rescaling.
    pub fn raw(values: Vec<f64>) -> Result<Self, RerankError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(RerankError::InvalidVector("empty or non-finite".into()));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, RerankError> {
    if u.dim() != v.dim() {
        return Err(RerankError::DimensionMismatch(u.dim(), v.dim()));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

pub trait EmbeddingProvider: Send + Sync {
    /// Stable name used to key caches.
    fn id(&self) -> String;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RerankError>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Arc<P> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RerankError> {
        (**self).embed(text)
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercased alphanumeric runs.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

/// Feature-hashed bag of tokens, L2-normalized.
pub fn hash_embed(text: &str, dim: usize) -> EmbeddingVector {
    assert!(dim >= 1, "embedding dim must be positive");
    let mut values = vec![0.0; dim];
    for token in tokens(text) {
        values[(fnv1a64(token.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    EmbeddingVector::normalized(values).expect("finite counts")
}

#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: DEFAULT_DIM }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-fnv1a64-{}", self.dim)
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RerankError> {
        Ok(hash_embed(text, self.dim))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheLine {
    text_hash: String,
    dim: usize,
    values: Vec<f64>,
}

/// Memoizes another provider per text, optionally backed by a
/// line-delimited cache file that new embeddings are appended to.
pub struct CachedEmbedder<P> {
    inner: P,
    memo: Mutex<HashMap<String, EmbeddingVector>>,
    file: Option<PathBuf>,
}

impl<P: EmbeddingProvider> CachedEmbedder<P> {
    pub fn new(inner: P) -> Self {
        CachedEmbedder { inner, memo: Mutex::new(HashMap::new()), file: None }
    }

    /// Loads existing entries from `path`; malformed lines are skipped.
    pub fn with_file(inner: P, path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut memo = HashMap::new();
        if path.exists() {
            for line in fs::read_to_string(&path)?.lines() {
                match serde_json::from_str::<CacheLine>(line) {
                    Ok(entry) => {
                        if let Ok(v) = EmbeddingVector::raw(entry.values) {
                            if v.dim() == entry.dim {
                                memo.insert(entry.text_hash, v);
                            }
                        }
                    }
                    Err(e) => tracing::warn!(error = %e, "skipping malformed embedding cache line"),
                }
            }
        }
        Ok(CachedEmbedder { inner, memo: Mutex::new(memo), file: Some(path) })
    }

    fn key(&self, text: &str) -> String {
        sha256_hex(format!("{}\n{}", self.inner.id(), text).as_bytes())
    }

    pub fn cached_len(&self) -> usize {
        self.memo.lock().expect("memo lock").len()
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedEmbedder<P> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, RerankError> {
        let key = self.key(text);
        if let Some(v) = self.memo.lock().expect("memo lock").get(&key) {
            return Ok(v.clone());
        }
        let v = self.inner.embed(text)?;
        let mut memo = self.memo.lock().expect("memo lock");
        if memo.insert(key.clone(), v.clone()).is_none() {
            if let Some(path) = &self.file {
                let line = serde_json::to_string(&CacheLine { text_hash: key, dim: v.dim(), values: v.values.clone() })
                    .expect("cache line encodes");
                let appended = fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .and_then(|mut f| writeln!(f, "{line}"));
                if let Err(e) = appended {
                    tracing::warn!(error = %e, "could not append to embedding cache");
                }
            }
        }
        Ok(v)
    }
}

/// Reorders `predictions` by cosine similarity between the summary text and
/// each item's attribute text. Ties keep the incoming order; items missing
/// from the catalog are embedded as empty text.
pub fn rerank_topk(
    predictions: &RankedPredictions,
    summary: &KeywordSummary,
    catalog: &CatalogSnapshot,
    provider: &dyn EmbeddingProvider,
) -> Result<RankedPredictions, RerankError> {
    rerank_with_text(predictions, &summary.to_embedding_text(), catalog, provider)
}

pub fn rerank_with_text(
    predictions: &RankedPredictions,
    summary_text: &str,
    catalog: &CatalogSnapshot,
    provider: &dyn EmbeddingProvider,
) -> Result<RankedPredictions, RerankError> {
    if predictions.entries.is_empty() {
        return Ok(predictions.clone());
    }
    let query = provider.embed(summary_text)?;
    let mut scored = Vec::with_capacity(predictions.entries.len());
    for entry in &predictions.entries {
        let text = catalog.get(&entry.item_id).map(|i| i.attribute_text()).unwrap_or_default();
        let score = cosine(&query, &provider.embed(&text)?)?;
        scored.push(ScoredItem { item_id: entry.item_id.clone(), score });
    }
    // stable: equal cosines keep the base model's order
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(RankedPredictions { session_id: predictions.session_id.clone(), k: predictions.k, entries: scored })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Item;
    use crate::money::Money;
    use crate::summarizer::Category;

    fn ev(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::raw(values.to_vec()).unwrap()
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn hash_embed_examples() {
        assert_eq!(hash_embed("green dress", 256), hash_embed("green dress", 256));
        assert!(hash_embed("", 256).values().iter().all(|&v| v == 0.0));
        let one = hash_embed("abc", 256);
        let nonzero: Vec<f64> = one.values().iter().copied().filter(|&v| v != 0.0).collect();
        assert_eq!(nonzero, vec![1.0]);
        // case and punctuation are not token content
        assert_eq!(hash_embed("Green, DRESS!", 64), hash_embed("green dress", 64));
        assert!((hash_embed("a b c d", 256).norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_examples() {
        let u = ev(&[0.3, -0.4]);
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine(&ev(&[1.0, 0.0]), &ev(&[1.0, 1.0])).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine(&ev(&[0.0, 0.0]), &ev(&[1.0, 1.0])).unwrap(), 0.0);
        assert!(matches!(cosine(&ev(&[1.0]), &ev(&[1.0, 0.0])), Err(RerankError::DimensionMismatch(1, 2))));
    }

    fn catalog() -> CatalogSnapshot {
        CatalogSnapshot::from_items(
            vec![
                Item::new("A", "leather boots", Money::from_cents(9000)).with_color("brown"),
                Item::new("B", "puff sleeve dress", Money::from_cents(1800)).with_color("green"),
            ],
            1,
        )
        .unwrap()
    }

    fn preds(ids: &[&str]) -> RankedPredictions {
        RankedPredictions {
            session_id: "s".into(),
            k: 50,
            entries: ids.iter().enumerate().map(|(i, id)| ScoredItem { item_id: id.to_string(), score: 1.0 - i as f64 * 0.1 }).collect(),
        }
    }

    #[test]
    fn overlapping_item_moves_up() {
        let mut summary = KeywordSummary::default();
        summary.set(Category::ProductCharacteristics, Some("green puff sleeve".into()));
        let p = HashEmbedder::default();
        let text = summary.to_embedding_text();
        let ca = cosine(&p.embed(&text).unwrap(), &p.embed(&catalog().get("A").unwrap().attribute_text()).unwrap()).unwrap();
        let cb = cosine(&p.embed(&text).unwrap(), &p.embed(&catalog().get("B").unwrap().attribute_text()).unwrap()).unwrap();
        assert!(cb > ca);
        let out = rerank_topk(&preds(&["A", "B"]), &summary, &catalog(), &p).unwrap();
        assert_eq!(out.entries.iter().map(|e| e.item_id.as_str()).collect::<Vec<_>>(), ["B", "A"]);
        assert_eq!(out.entries[0].score, cb);
    }

    #[test]
    fn ties_keep_order_and_unknown_items_score_zero() {
        let empty = KeywordSummary::default();
        let out = rerank_topk(&preds(&["B", "zzz", "A"]), &empty, &catalog(), &HashEmbedder::default()).unwrap();
        assert_eq!(out.entries.iter().map(|e| e.item_id.as_str()).collect::<Vec<_>>(), ["B", "zzz", "A"]);
        assert!(out.entries.iter().all(|e| e.score == 0.0));
        let none = rerank_topk(&preds(&[]), &empty, &catalog(), &HashEmbedder::default()).unwrap();
        assert!(none.entries.is_empty());
    }

    #[test]
    fn cache_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        let first = CachedEmbedder::with_file(HashEmbedder { dim: 16 }, &path).unwrap();
        let v = first.embed("green dress").unwrap();
        first.embed("green dress").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 1);
        let second = CachedEmbedder::with_file(HashEmbedder { dim: 16 }, &path).unwrap();
        assert_eq!(second.cached_len(), 1);
        assert_eq!(second.embed("green dress").unwrap(), v);
    }
}
