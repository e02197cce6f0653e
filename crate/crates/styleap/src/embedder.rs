//! Sentence-to-vector providers for retrieval.
//!
//! The default [`HashEmbedder`] hashes character 3–5-grams and word
//! unigrams into `d` signed buckets with sublinear tf weighting and L2
//! normalization: deterministic, training-free, and "similar surface →
//! nearby vector". A [`LearnedEmbedder`] built from a trained translation
//! model exercises the same abstraction with learned representations.

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::util::fnv1a64;

/// Fixed-dimension real vector for one sentence, with its cached L2 norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceVector {
    pub values: Vec<f32>,
    pub norm: f32,
}

impl SentenceVector {
    pub fn new(values: Vec<f32>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f32>().sqrt();
        SentenceVector { values, norm }
    }

    /// The reserved vector for empty sentences: the unit basis vector e0.
    pub fn empty_sentinel(dim: usize) -> Self {
        let mut values = vec![0.0; dim];
        values[0] = 1.0;
        SentenceVector { values, norm: 1.0 }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, other: &SentenceVector) -> f32 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Cosine similarity in [-1, 1]; zero vectors compare as orthogonal.
    pub fn cosine(&self, other: &SentenceVector) -> f32 {
        if self.norm == 0.0 || other.norm == 0.0 {
            return 0.0;
        }
        (self.dot(other) / (self.norm * other.norm)).clamp(-1.0, 1.0)
    }

    pub fn l2_distance(&self, other: &SentenceVector) -> f32 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                let d = a - b;
                d * d
            })
            .sum::<f32>()
            .sqrt()
    }
}

/// A named sentence-embedding provider.
///
/// Providers are immutable after construction and safe to call from many
/// threads; deterministic providers are referentially transparent.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn deterministic(&self) -> bool {
        true
    }

    fn embed(&self, sentence: &Sentence) -> SentenceVector;

    fn embed_batch(&self, sentences: &[Sentence]) -> Vec<SentenceVector> {
        sentences.iter().map(|s| self.embed(s)).collect()
    }
}

/// Feature-hashing provider: character 3–5-grams + word unigrams, signed
/// hashing, log(1+tf) weighting, L2 normalized output.
#[derive(Clone, Debug)]
pub struct HashEmbedder {
    dim: usize,
    name: String,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2, "embedding dimension must be at least 2");
        HashEmbedder {
            dim,
            name: format!("hash{dim}"),
        }
    }

    /// The default 256-dimensional provider.
    pub fn default256() -> Self {
        HashEmbedder::new(256)
    }

    fn accumulate(&self, counts: &mut std::collections::HashMap<u64, f32>, feature: &[u8]) {
        *counts.entry(fnv1a64(feature)).or_insert(0.0) += 1.0;
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, sentence: &Sentence) -> SentenceVector {
        let text = sentence.text.trim();
        if text.is_empty() {
            return SentenceVector::empty_sentinel(self.dim);
        }

        let mut counts = std::collections::HashMap::new();
        for word in text.split_whitespace() {
            let mut feat = Vec::with_capacity(word.len() + 2);
            feat.extend_from_slice(b"w:");
            feat.extend_from_slice(word.as_bytes());
            self.accumulate(&mut counts, &feat);
        }
        let chars: Vec<char> = text.chars().collect();
        for n in 3..=5usize {
            if chars.len() < n {
                continue;
            }
            for window in chars.windows(n) {
                let gram: String = window.iter().collect();
                let mut feat = Vec::with_capacity(gram.len() + 3);
                feat.extend_from_slice(b"c");
                feat.push(b'0' + n as u8);
                feat.push(b':');
                feat.extend_from_slice(gram.as_bytes());
                self.accumulate(&mut counts, &feat);
            }
        }

        let mut values = vec![0.0f32; self.dim];
        // Deterministic accumulation order: sort by feature hash.
        let mut entries: Vec<(u64, f32)> = counts.into_iter().collect();
        entries.sort_unstable_by_key(|&(h, _)| h);
        for (h, tf) in entries {
            let bucket = ((h >> 1) % self.dim as u64) as usize;
            let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
            values[bucket] += sign * (1.0 + tf).ln();
        }

        let norm = values.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm == 0.0 {
            return SentenceVector::empty_sentinel(self.dim);
        }
        for v in &mut values {
            *v /= norm;
        }
        SentenceVector { values, norm: 1.0 }
    }
}

/// Provider backed by a trained model's source-embedding table: the
/// L2-normalized average of the embeddings of a sentence's tokens.
pub struct LearnedEmbedder {
    name: String,
    dim: usize,
    /// Row-major [vocab, dim] embedding table copy.
    table: Vec<f32>,
    tokenizer: crate::corpus::TokenizerModel,
}

impl LearnedEmbedder {
    pub fn new(table: Vec<f32>, dim: usize, tokenizer: crate::corpus::TokenizerModel) -> Self {
        assert!(dim >= 2 && table.len() % dim == 0);
        LearnedEmbedder {
            name: "learned".into(),
            dim,
            table,
            tokenizer,
        }
    }
}

impl EmbeddingProvider for LearnedEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, sentence: &Sentence) -> SentenceVector {
        let tokens = if sentence.tokens.is_empty() {
            self.tokenizer.tokenize(&sentence.text)
        } else {
            sentence.tokens.clone()
        };
        if tokens.is_empty() {
            return SentenceVector::empty_sentinel(self.dim);
        }
        let mut values = vec![0.0f32; self.dim];
        let vocab = self.table.len() / self.dim;
        for &id in &tokens {
            let row = (id as usize).min(vocab - 1) * self.dim;
            for (v, t) in values.iter_mut().zip(&self.table[row..row + self.dim]) {
                *v += t;
            }
        }
        let norm = values.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm == 0.0 {
            return SentenceVector::empty_sentinel(self.dim);
        }
        for v in &mut values {
            *v /= norm;
        }
        SentenceVector { values, norm: 1.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(text: &str) -> Sentence {
        Sentence::new(text)
    }

    #[test]
    fn embedding_is_deterministic() {
        let e = HashEmbedder::default256();
        assert_eq!(e.embed(&s("the cat sat")), e.embed(&s("the cat sat")));
    }

    #[test]
    fn empty_sentence_maps_to_basis_vector() {
        let e = HashEmbedder::default256();
        let v = e.embed(&s(""));
        assert_eq!(v.values[0], 1.0);
        assert!(v.values[1..].iter().all(|&x| x == 0.0));
        assert!((v.norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn vectors_are_unit_norm_and_finite() {
        let e = HashEmbedder::default256();
        for text in ["a", "the cat sat", "zq xv wk", "one two three four five"] {
            let v = e.embed(&s(text));
            let norm: f32 = v.values.iter().map(|x| x * x).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "norm {norm} for {text:?}");
            assert!(v.values.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn similar_surface_is_nearer_than_dissimilar() {
        // Oracle: both cosines computed through the same public embed path;
        // the assertion is the spec'd ordering, not a frozen value.
        let e = HashEmbedder::default256();
        let a = e.embed(&s("the cat sat"));
        let b = e.embed(&s("the cat sat down"));
        let c = e.embed(&s("zq xv wk"));
        assert!(a.cosine(&b) > a.cosine(&c));
    }

    #[test]
    fn batch_matches_single_and_preserves_order() {
        let e = HashEmbedder::default256();
        let sentences: Vec<Sentence> = ["x", "y z", "w"].iter().map(|t| s(t)).collect();
        let batch = e.embed_batch(&sentences);
        assert_eq!(batch.len(), 3);
        for (i, sent) in sentences.iter().enumerate() {
            assert_eq!(batch[i], e.embed(sent));
        }
        // Permuted input gives identically permuted output.
        let permuted = [sentences[2].clone(), sentences[0].clone(), sentences[1].clone()];
        let batch_p = e.embed_batch(&permuted);
        assert_eq!(batch_p[0], batch[2]);
        assert_eq!(batch_p[1], batch[0]);
        assert_eq!(batch_p[2], batch[1]);
    }

    #[test]
    fn cosine_symmetric_and_bounded() {
        let e = HashEmbedder::new(64);
        let texts = ["a b c", "c b a", "hello world", "q", ""];
        for x in &texts {
            for y in &texts {
                let vx = e.embed(&s(x));
                let vy = e.embed(&s(y));
                let cxy = vx.cosine(&vy);
                let cyx = vy.cosine(&vx);
                assert!((cxy - cyx).abs() < 1e-6);
                assert!((-1.0..=1.0).contains(&cxy));
            }
        }
    }
}
