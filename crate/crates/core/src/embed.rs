//! Face embeddings: the 128-d unit vector contract, the matching metric,
//! the triplet objective, and a deterministic mock provider.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::align::AlignedFace;

pub const EMBEDDING_DIM: usize = 128;
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot normalize a zero (or non-finite) vector")]
    Degenerate,
    #[error("embedding must have {EMBEDDING_DIM} values, got {0}")]
    Dimension(usize),
    #[error("embedding has non-finite values")]
    NonFinite,
    #[error("embedding is not unit length (norm {0})")]
    NotUnit(f64),
    #[error("triplet margin must be positive and finite, got {0}")]
    Margin(f64),
    #[error("embedding provider: {0}")]
    Provider(String),
}

/// A unit-length 128-d face encoding.
#[derive(Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Wraps values that already satisfy the embedding invariants.
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.len() != EMBEDDING_DIM {
            return Err(EmbedError::Dimension(values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        let norm = norm(&values);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(EmbedError::NotUnit(norm));
        }
        Ok(Self(values))
    }

    /// Normalizes arbitrary raw network output into an embedding.
    pub fn from_raw(values: &[f64]) -> Result<Self, EmbedError> {
        if values.len() != EMBEDDING_DIM {
            return Err(EmbedError::Dimension(values.len()));
        }
        Self::new(l2_normalize(values)?)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl fmt::Debug for Embedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Embedding([{:.4}, {:.4}, …; {}])",
            self.0[0],
            self.0[1],
            self.0.len()
        )
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>, EmbedError> {
    let n = norm(v);
    if !(n > 0.0 && n.is_finite()) {
        return Err(EmbedError::Degenerate);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

pub fn squared_distance(a: &Embedding, b: &Embedding) -> f64 {
    a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Euclidean distance, the matching metric. At most 2 for unit vectors.
pub fn distance(a: &Embedding, b: &Embedding) -> f64 {
    squared_distance(a, b).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletConfig {
    pub margin: f64,
}

impl TripletConfig {
    pub fn new(margin: f64) -> Result<Self, EmbedError> {
        if !(margin > 0.0 && margin.is_finite()) {
            return Err(EmbedError::Margin(margin));
        }
        Ok(Self { margin })
    }
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self { margin: 0.2 }
    }
}

/// `max(0, ‖a−p‖² − ‖a−n‖² + margin)`.
pub fn triplet_loss(anchor: &Embedding, positive: &Embedding, negative: &Embedding, cfg: &TripletConfig) -> f64 {
    (squared_distance(anchor, positive) - squared_distance(anchor, negative) + cfg.margin).max(0.0)
}

/// Produces embeddings from aligned faces.
///
/// Implementations must be deterministic: bit-identical faces give
/// bit-identical embeddings.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, face: &AlignedFace) -> Result<Embedding, EmbedError>;

    /// Whether `embed` may be called from several threads at once.
    fn supports_concurrent_calls(&self) -> bool {
        true
    }
}

/// Angular radius of the per-face perturbation around a tagged identity's
/// base direction. Two faces of one identity differ by at most ~0.1.
const MOCK_PERTURBATION: f64 = 0.05;

/// Deterministic stand-in for a pretrained face network.
///
/// Untagged faces map to a pseudo-random unit vector seeded by a digest of
/// their pixels and the provider seed. Tagged fixture faces map to a small
/// pixel-seeded perturbation of a per-identity direction, so same-tag faces
/// land within ~0.1 of each other and different tags land near √2 apart.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MockEmbedder {
    pub seed: u64,
}

impl MockEmbedder {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn embed(&self, face: &AlignedFace) -> Result<Embedding, EmbedError> {
        Ok(mock_embed(face, self.seed))
    }
}

fn pixel_digest(face: &AlignedFace) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"cabwatch-mock-pixels-v1");
    h.update((face.image.width() as u64).to_le_bytes());
    h.update((face.image.height() as u64).to_le_bytes());
    h.update(face.image.data());
    h.finalize().into()
}

fn gaussian_unit(domain: &[u8], key: &[u8], seed: u64) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(domain);
    h.update((key.len() as u64).to_le_bytes());
    h.update(key);
    h.update(seed.to_le_bytes());
    let rng_seed: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(rng_seed);
    loop {
        let v: Vec<f64> = (0..EMBEDDING_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
        // a zero draw has probability 0, but stay total
        if let Ok(u) = l2_normalize(&v) {
            return u;
        }
    }
}

pub fn mock_embed(face: &AlignedFace, seed: u64) -> Embedding {
    let digest = pixel_digest(face);
    let values = match &face.identity_tag {
        None => gaussian_unit(b"cabwatch-mock-face", &digest, seed),
        Some(tag) => {
            let base = gaussian_unit(b"cabwatch-mock-identity", tag.as_bytes(), seed);
            let noise = gaussian_unit(b"cabwatch-mock-jitter", &digest, seed);
            // keep only the component orthogonal to the identity direction
            let along: f64 = base.iter().zip(&noise).map(|(b, n)| b * n).sum();
            let ortho: Vec<f64> = noise.iter().zip(&base).map(|(n, b)| n - along * b).collect();
            let ortho = l2_normalize(&ortho).unwrap_or_else(|_| vec![0.0; EMBEDDING_DIM]);
            let mixed: Vec<f64> = base
                .iter()
                .zip(&ortho)
                .map(|(b, o)| b + MOCK_PERTURBATION * o)
                .collect();
            l2_normalize(&mixed).expect("base has unit norm")
        }
    };
    Embedding(values)
}
