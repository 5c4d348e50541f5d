//! Text embedding port plus a deterministic feature-hashing embedder.

use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding backend failed: {0}")]
    Backend(String),
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// Maps text to a unit-norm vector of fixed dimension.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError>;
}

/// Cosine of the angle between `a` and `b`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>, EmbedError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(EmbedError::ZeroNorm);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Signed feature hashing over lowercase word unigrams and bigrams.
///
/// Texts sharing most of their words land close together, unrelated texts
/// end up nearly orthogonal. Empty text maps to a fixed bucket so the
/// result is never the zero vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    fn bucket(&self, token: &str) -> (usize, f64) {
        let digest = Sha256::digest(token.as_bytes());
        let h = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        ((h % self.dim as u64) as usize, sign)
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(256)
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let words: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        let mut v = vec![0.0; self.dim];
        if words.is_empty() {
            let (i, s) = self.bucket("\u{0}empty");
            v[i] = s;
        }
        for w in &words {
            let (i, s) = self.bucket(w);
            v[i] += s;
        }
        for pair in words.windows(2) {
            let (i, s) = self.bucket(&format!("{} {}", pair[0], pair[1]));
            v[i] += 0.5 * s;
        }
        if v.iter().all(|x| *x == 0.0) {
            let (i, s) = self.bucket("\u{0}cancelled");
            v[i] = s;
        }
        normalize(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(EmbedError::ZeroNorm));
        assert_eq!(cosine(&[1.0], &[1.0, 0.0]), Err(EmbedError::DimensionMismatch(1, 2)));
    }

    #[test]
    fn hash_embedder_is_deterministic_and_unit_norm() {
        let e = HashEmbedder::new(64);
        let a = e.embed("Given an array of n integers, find the maximum sum").unwrap();
        assert_eq!(a, e.embed("Given an array of n integers, find the maximum sum").unwrap());
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(e.embed("").unwrap().len(), 64);
    }

    #[test]
    fn near_duplicates_are_close() {
        let e = HashEmbedder::new(512);
        let a = e.embed("count the number of paths in a directed acyclic graph modulo a prime").unwrap();
        let b = e.embed("count the number of paths in a directed acyclic graph modulo a large prime").unwrap();
        let c = e.embed("sort the strings lexicographically and print the median one").unwrap();
        assert!(cosine(&a, &b).unwrap() > 0.9);
        assert!(cosine(&a, &c).unwrap() < 0.5);
    }
}
