//! Offline text embedder: L2-normalized hashed term-frequency vectors.
//!
//! Tokens are the frozen [`crate::text::tokenize`] output; each token is
//! bucketed by FNV-1a 64 modulo the dimension. Deterministic across runs
//! and platforms, which makes hermetic pipeline tests reproducible.

use super::{Embedder, EmbeddingVector, GatewayError};
use crate::text::tokenize;

pub const OFFLINE_EMBED_DIM: usize = 512;
pub const OFFLINE_EMBEDDER_NAME: &str = "offline-tf-512";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a 64-bit. Public so tests can verify bucket assignments with an
/// independently computed hash.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineEmbedder;

impl OfflineEmbedder {
    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0f64; OFFLINE_EMBED_DIM];
        for token in tokenize(text) {
            let bucket = (fnv1a64(token.as_bytes()) % OFFLINE_EMBED_DIM as u64) as usize;
            values[bucket] += 1.0;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        EmbeddingVector {
            values,
            model_name: OFFLINE_EMBEDDER_NAME.to_string(),
        }
    }
}

impl Embedder for OfflineEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "embed requires at least one text".to_string(),
            ));
        }
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn name(&self) -> String {
        OFFLINE_EMBEDDER_NAME.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_texts_embed_identically() {
        let embedder = OfflineEmbedder;
        let out = embedder
            .embed(&["x".to_string(), "x".to_string()])
            .unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn disjoint_texts_are_orthogonal_without_collisions() {
        // Independent hash oracle: recompute FNV-1a by hand for the four
        // tokens and confirm they land in four distinct buckets, so the
        // cosine of the two embeddings is exactly zero.
        fn oracle_fnv(token: &str) -> u64 {
            let mut h: u64 = 0xcbf29ce484222325;
            for b in token.bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
            h
        }
        let tokens = ["red", "floor", "blue", "sky"];
        let buckets: Vec<usize> = tokens
            .iter()
            .map(|t| (oracle_fnv(t) % OFFLINE_EMBED_DIM as u64) as usize)
            .collect();
        let mut unique = buckets.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), 4, "hash collision among {tokens:?}");

        let embedder = OfflineEmbedder;
        let out = embedder
            .embed(&["red floor".to_string(), "blue sky".to_string()])
            .unwrap();
        let dot: f64 = out[0]
            .values
            .iter()
            .zip(&out[1].values)
            .map(|(a, b)| a * b)
            .sum();
        assert_eq!(dot, 0.0);
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let embedder = OfflineEmbedder;
        let out = embedder.embed(&["the cat sat on the mat".to_string()]).unwrap();
        let norm: f64 = out[0].values.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_input_rejected() {
        let embedder = OfflineEmbedder;
        assert!(matches!(
            embedder.embed(&[]),
            Err(GatewayError::InvalidRequest(_))
        ));
    }

    #[test]
    fn permutation_equivariance() {
        let embedder = OfflineEmbedder;
        let texts: Vec<String> = ["a b", "c d", "e f"].iter().map(|s| s.to_string()).collect();
        let fwd = embedder.embed(&texts).unwrap();
        let rev_texts: Vec<String> = texts.iter().rev().cloned().collect();
        let rev = embedder.embed(&rev_texts).unwrap();
        assert_eq!(fwd[0], rev[2]);
        assert_eq!(fwd[2], rev[0]);
    }
}
