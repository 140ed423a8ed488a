//! Appearance embeddings.
//!
//! Embeddings are supplied from outside (any re-identification network can
//! produce them) or generated synthetically for tests and toy training.
//! Vectors are never renormalized here: cosine similarity downstream is
//! magnitude-free, but graph propagation sees raw magnitudes, so
//! normalization is the producer's call.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbeddingError {
    #[error("no embedding for sequence {sequence:?}, frame {frame}, detection {det_index}")]
    MissingKey { sequence: String, frame: u32, det_index: usize },
    #[error("embedding has {found} components, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding contains a non-finite component")]
    NonFinite,
    #[error("duplicate embedding for sequence {sequence:?}, frame {frame}, detection {det_index}")]
    DuplicateKey { sequence: String, frame: u32, det_index: usize },
}

/// A finite appearance feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceEmbedding(Vec<f64>);

impl AppearanceEmbedding {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Lookup of per-detection embeddings keyed by (sequence, frame, detection
/// index within the frame).
pub trait EmbeddingSource {
    fn dim(&self) -> usize;

    fn embedding(&self, sequence: &str, frame: u32, det_index: usize) -> Result<AppearanceEmbedding, EmbeddingError>;
}

/// Looks up an embedding and checks it against the configured dimension.
pub fn get_embedding(
    source: &dyn EmbeddingSource,
    sequence: &str,
    frame: u32,
    det_index: usize,
    expected_dim: usize,
) -> Result<AppearanceEmbedding, EmbeddingError> {
    let e = source.embedding(sequence, frame, det_index)?;
    if e.dim() != expected_dim {
        return Err(EmbeddingError::DimensionMismatch { expected: expected_dim, found: e.dim() });
    }
    Ok(e)
}

type Key = (String, u32, usize);

/// In-memory table of embeddings; the file-backed provider loads into one.
/// Missing keys are errors, never fabricated vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<Key, AppearanceEmbedding>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: BTreeMap::new() }
    }

    pub fn insert(
        &mut self,
        sequence: &str,
        frame: u32,
        det_index: usize,
        embedding: AppearanceEmbedding,
    ) -> Result<(), EmbeddingError> {
        if embedding.dim() != self.dim {
            return Err(EmbeddingError::DimensionMismatch { expected: self.dim, found: embedding.dim() });
        }
        let key = (sequence.to_string(), frame, det_index);
        if self.entries.contains_key(&key) {
            return Err(EmbeddingError::DuplicateKey { sequence: key.0, frame, det_index });
        }
        self.entries.insert(key, embedding);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = ((&str, u32, usize), &AppearanceEmbedding)> {
        self.entries.iter().map(|((s, f, d), e)| ((s.as_str(), *f, *d), e))
    }
}

impl EmbeddingSource for EmbeddingTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embedding(&self, sequence: &str, frame: u32, det_index: usize) -> Result<AppearanceEmbedding, EmbeddingError> {
        self.entries
            .get(&(sequence.to_string(), frame, det_index))
            .cloned()
            .ok_or_else(|| EmbeddingError::MissingKey { sequence: sequence.to_string(), frame, det_index })
    }
}

const BASE_STREAM: u64 = 0x5EED_BA5E;

/// Unit-norm base direction of a synthetic identity, deterministic in the id.
pub fn identity_base(identity_id: u64, dim: usize) -> Vec<f64> {
    let mut rng = rng::seeded(rng::mix(BASE_STREAM, identity_id));
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = crate::linalg::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Identity base vector plus isotropic Gaussian noise. The per-component
/// standard deviation is `noise_scale / sqrt(dim)`, so the expected noise
/// norm is about `noise_scale` whatever the dimension.
pub fn synthetic_identity_embedding(identity_id: u64, dim: usize, noise_scale: f64, rng_seed: u64) -> AppearanceEmbedding {
    assert!(noise_scale >= 0.0 && noise_scale.is_finite(), "noise_scale must be non-negative");
    let mut v = identity_base(identity_id, dim);
    if noise_scale > 0.0 {
        let sigma = noise_scale / libm::sqrt(dim as f64);
        let normal = Normal::new(0.0, sigma).expect("valid sigma");
        let mut rng = rng::seeded(rng_seed);
        for x in &mut v {
            *x += normal.sample(&mut rng);
        }
    }
    AppearanceEmbedding(v)
}

/// Deterministic synthetic embeddings. Keys with an assigned identity sample
/// that identity; any other key gets an identity derived from the key itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProvider {
    dim: usize,
    noise_scale: f64,
    seed: u64,
    identities: BTreeMap<Key, u64>,
}

impl SyntheticProvider {
    pub fn new(dim: usize, noise_scale: f64, seed: u64) -> Self {
        assert!(noise_scale >= 0.0, "noise_scale must be non-negative");
        Self { dim, noise_scale, seed, identities: BTreeMap::new() }
    }

    pub fn assign(&mut self, sequence: &str, frame: u32, det_index: usize, identity_id: u64) {
        self.identities.insert((sequence.to_string(), frame, det_index), identity_id);
    }

    fn key_seed(&self, sequence: &str, frame: u32, det_index: usize) -> u64 {
        let s = rng::mix(self.seed, rng::hash_str(sequence));
        rng::mix(rng::mix(s, frame as u64), det_index as u64)
    }
}

impl EmbeddingSource for SyntheticProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embedding(&self, sequence: &str, frame: u32, det_index: usize) -> Result<AppearanceEmbedding, EmbeddingError> {
        let key_seed = self.key_seed(sequence, frame, det_index);
        let identity = self
            .identities
            .get(&(sequence.to_string(), frame, det_index))
            .copied()
            .unwrap_or(key_seed);
        Ok(synthetic_identity_embedding(identity, self.dim, self.noise_scale, key_seed))
    }
}
