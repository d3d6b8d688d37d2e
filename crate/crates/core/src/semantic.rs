//! Level-3 routing: embedding similarity against per-category task vectors.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{Complexity, ComplexityScore};
use crate::http::{join_url, HttpTransport};

/// Reference seed phrases shipped with the crate.
pub const REFERENCE_SEEDS: &str = include_str!("../data/seeds.toml");

pub const REFERENCE_DIMENSION: usize = 256;
pub const MIN_SEEDS_PER_CATEGORY: usize = 8;

#[derive(Debug, Error)]
pub enum SemanticError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding provider failed: {0}")]
    Provider(String),
    #[error("seed configuration: {0}")]
    Config(String),
}

/// A fixed-length embedding. Unit-norm unless `degenerate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    /// Set when the input produced no signal and the vector is all zeros.
    pub degenerate: bool,
}

impl EmbeddingVector {
    /// L2-normalizes `values`; an all-zero input stays zero and is flagged.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            values.iter_mut().for_each(|v| *v = 0.0);
            return Self {
                values,
                degenerate: true,
            };
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Self {
            values,
            degenerate: false,
        }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; zero when either side has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, SemanticError> {
    if a.len() != b.len() {
        return Err(SemanticError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, SemanticError>;
}

/// Lowercase alphanumeric tokens.
pub fn alnum_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic feature-hashing embedder: every token adds ±1 to one of
/// `dimension` buckets, then the sum is L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension: dimension.max(1),
        }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(REFERENCE_DIMENSION)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, SemanticError> {
        let mut values = vec![0.0; self.dimension];
        for tok in alnum_tokens(text) {
            let h = fnv1a64(tok.as_bytes());
            let bucket = (h % self.dimension as u64) as usize;
            let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
            values[bucket] += sign;
        }
        Ok(EmbeddingVector::normalized(values))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

/// Calls `POST {base}/embed` with `{"text": ...}` and expects `{"vector": [...]}`.
pub struct RemoteEmbedder {
    base_url: String,
    dimension: usize,
    transport: Arc<dyn HttpTransport>,
}

impl RemoteEmbedder {
    pub fn new(base_url: impl Into<String>, dimension: usize, transport: Arc<dyn HttpTransport>) -> Self {
        Self {
            base_url: base_url.into(),
            dimension,
            transport,
        }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, SemanticError> {
        let body = serde_json::to_string(&EmbedRequest { text }).expect("serialize");
        let resp = self
            .transport
            .post_json(&join_url(&self.base_url, "embed"), &body)
            .map_err(|e| SemanticError::Provider(e.to_string()))?;
        if !resp.is_success() {
            return Err(SemanticError::Provider(format!(
                "embedding endpoint returned status {}",
                resp.status
            )));
        }
        let parsed: EmbedResponse = serde_json::from_str(&resp.body)
            .map_err(|e| SemanticError::Provider(format!("malformed embedding response: {e}")))?;
        if parsed.vector.len() != self.dimension {
            return Err(SemanticError::DimensionMismatch {
                left: parsed.vector.len(),
                right: self.dimension,
            });
        }
        Ok(EmbeddingVector::normalized(parsed.vector))
    }
}

/// Seed phrases per category.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSets(BTreeMap<Complexity, Vec<String>>);

impl SeedSets {
    pub fn new(map: BTreeMap<Complexity, Vec<String>>) -> Self {
        Self(map)
    }

    pub fn parse(src: &str) -> Result<Self, SemanticError> {
        let raw: BTreeMap<String, Vec<String>> =
            toml::from_str(src).map_err(|e| SemanticError::Config(e.to_string()))?;
        let mut map = BTreeMap::new();
        for (k, v) in raw {
            let cat: Complexity = k
                .parse()
                .map_err(|_| SemanticError::Config(format!("unknown seed category '{k}'")))?;
            map.insert(cat, v);
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self, SemanticError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| SemanticError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&src).map_err(|e| SemanticError::Config(format!("{}: {e}", path.display())))
    }

    pub fn reference() -> Self {
        Self::parse(REFERENCE_SEEDS).expect("reference seeds parse")
    }

    pub fn get(&self, c: Complexity) -> Option<&[String]> {
        self.0.get(&c).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    pub category: Complexity,
    pub vector: EmbeddingVector,
    pub seed_phrases: Vec<String>,
}

/// One task vector per category, in `Complexity` order.
#[derive(Debug, Clone)]
pub struct TaskRegistry {
    vectors: Vec<TaskVector>,
}

/// Each task vector is the L2-normalized mean of its seed embeddings.
pub fn build_task_vectors(
    provider: &dyn EmbeddingProvider,
    seeds: &SeedSets,
) -> Result<TaskRegistry, SemanticError> {
    let dim = provider.dimension();
    let mut vectors = Vec::with_capacity(3);
    for cat in Complexity::ALL {
        let phrases = seeds
            .get(cat)
            .ok_or_else(|| SemanticError::Config(format!("missing '{cat}' seed list")))?;
        if phrases.len() < MIN_SEEDS_PER_CATEGORY {
            return Err(SemanticError::Config(format!(
                "'{cat}' has {} seeds, need at least {MIN_SEEDS_PER_CATEGORY}",
                phrases.len()
            )));
        }
        let mut sum = vec![0.0; dim];
        for p in phrases {
            let e = provider.embed(p)?;
            if e.dimension() != dim {
                return Err(SemanticError::DimensionMismatch {
                    left: e.dimension(),
                    right: dim,
                });
            }
            sum.iter_mut().zip(&e.values).for_each(|(s, v)| *s += v);
        }
        let n = phrases.len() as f64;
        sum.iter_mut().for_each(|s| *s /= n);
        vectors.push(TaskVector {
            category: cat,
            vector: EmbeddingVector::normalized(sum),
            seed_phrases: phrases.to_vec(),
        });
    }
    Ok(TaskRegistry { vectors })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticVerdict {
    pub category: Complexity,
    /// Indexed by `Complexity::index()`.
    pub similarities: [f64; 3],
    pub score: ComplexityScore,
    pub confidence: f64,
}

/// Midpoint of each category's band on the 0-100 scale.
pub fn band_midpoint(c: Complexity) -> ComplexityScore {
    ComplexityScore::clamped(match c {
        Complexity::Simple => 17,
        Complexity::Medium => 50,
        Complexity::Complex => 83,
    })
}

/// Argmax with ties going to the larger tier; confidence is the margin
/// between the best and second-best similarity.
pub fn verdict_from_similarities(similarities: [f64; 3]) -> SemanticVerdict {
    let mut best = 0;
    for i in 1..3 {
        if similarities[i] >= similarities[best] {
            best = i;
        }
    }
    let second = (0..3)
        .filter(|&i| i != best)
        .map(|i| similarities[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let category = Complexity::ALL[best];
    SemanticVerdict {
        category,
        similarities,
        score: band_midpoint(category),
        confidence: (similarities[best] - second).clamp(0.0, 1.0),
    }
}

impl TaskRegistry {
    pub fn reference(provider: &dyn EmbeddingProvider) -> Result<Self, SemanticError> {
        build_task_vectors(provider, &SeedSets::reference())
    }

    pub fn vectors(&self) -> &[TaskVector] {
        &self.vectors
    }

    pub fn get(&self, c: Complexity) -> &TaskVector {
        &self.vectors[c.index()]
    }

    pub fn dimension(&self) -> usize {
        self.vectors[0].vector.dimension()
    }

    pub fn classify_embedding(&self, e: &EmbeddingVector) -> Result<SemanticVerdict, SemanticError> {
        if e.degenerate || l2_norm(&e.values) == 0.0 {
            return Ok(SemanticVerdict {
                category: Complexity::Complex,
                similarities: [0.0; 3],
                score: band_midpoint(Complexity::Complex),
                confidence: 0.0,
            });
        }
        let mut sims = [0.0; 3];
        for tv in &self.vectors {
            sims[tv.category.index()] = cosine(&e.values, &tv.vector.values)?;
        }
        Ok(verdict_from_similarities(sims))
    }

    /// SHA-256 over the task vector components.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for tv in &self.vectors {
            h.update(tv.category.as_str().as_bytes());
            for v in &tv.vector.values {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

pub fn classify_semantic(
    registry: &TaskRegistry,
    provider: &dyn EmbeddingProvider,
    text: &str,
) -> Result<SemanticVerdict, SemanticError> {
    let e = provider.embed(text)?;
    registry.classify_embedding(&e)
}
