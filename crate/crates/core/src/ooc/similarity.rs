use std::collections::HashMap;

use crate::encoders::{content_tokens, embed_sentence, SentenceCache, SentenceEmbedder};
use crate::{AdapterError, Error, Result};

/// Semantic textual similarity adapter. Scores are reported in the
/// adapter's native range and mapped to `[0, 1]` by [`semantic_similarity`].
pub trait SentenceSimilarity: Send + Sync {
    fn tag(&self) -> &str;
    /// `(low, high)` bounds of raw scores.
    fn native_range(&self) -> (f64, f64);
    fn similarity(&self, a: &str, b: &str) -> std::result::Result<f64, AdapterError>;
}

/// Affine map of the adapter score from its native range onto `[0, 1]`,
/// clamped.
pub fn semantic_similarity(c1: &str, c2: &str, sts: &dyn SentenceSimilarity) -> Result<f64> {
    let raw = sts.similarity(c1, c2)?;
    if !raw.is_finite() {
        return Err(Error::NonFinite("similarity score"));
    }
    let (lo, hi) = sts.native_range();
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return Err(Error::Config(format!("{}: empty native range", sts.tag())));
    }
    Ok(((raw - lo) / (hi - lo)).clamp(0.0, 1.0))
}

pub const LEXICAL_OVERLAP_TAG: &str = "lexical-cosine-v1";

/// Cosine similarity of content-word count vectors; native range `[0, 1]`.
#[derive(Debug, Clone, Default)]
pub struct LexicalOverlapSts;

fn counts(text: &str) -> HashMap<String, f64> {
    let mut m = HashMap::new();
    for t in content_tokens(text) {
        *m.entry(t).or_insert(0.0) += 1.0;
    }
    m
}

impl SentenceSimilarity for LexicalOverlapSts {
    fn tag(&self) -> &str {
        LEXICAL_OVERLAP_TAG
    }

    fn native_range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn similarity(&self, a: &str, b: &str) -> std::result::Result<f64, AdapterError> {
        let (ca, cb) = (counts(a), counts(b));
        if ca.is_empty() || cb.is_empty() {
            return Ok(if a.trim() == b.trim() { 1.0 } else { 0.0 });
        }
        let dot: f64 = ca.iter().filter_map(|(k, v)| cb.get(k).map(|w| v * w)).sum();
        let na: f64 = ca.values().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = cb.values().map(|v| v * v).sum::<f64>().sqrt();
        Ok((dot / (na * nb)).min(1.0))
    }
}

/// Cosine of two sentence-embedder vectors; native range `[-1, 1]`.
pub struct EmbeddingCosineSts<E> {
    embedder: E,
    cache: SentenceCache,
    tag: String,
}

impl<E: SentenceEmbedder> EmbeddingCosineSts<E> {
    pub fn new(embedder: E) -> Self {
        let tag = format!("cosine:{}", embedder.tag());
        Self {
            embedder,
            cache: SentenceCache::new(),
            tag,
        }
    }
}

impl<E: SentenceEmbedder> SentenceSimilarity for EmbeddingCosineSts<E> {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn native_range(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }

    fn similarity(&self, a: &str, b: &str) -> std::result::Result<f64, AdapterError> {
        let embed = |t: &str| {
            embed_sentence(t, &self.embedder, &self.cache)
                .map_err(|e| AdapterError::fatal(self.tag.clone(), e.to_string()))
        };
        let (va, vb) = (embed(a)?, embed(b)?);
        let dot: f64 = va.values.iter().zip(&vb.values).map(|(x, y)| *x as f64 * *y as f64).sum();
        let na: f64 = va.values.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = vb.values.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return Ok(if a == b { 1.0 } else { 0.0 });
        }
        Ok((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(f64);

    impl SentenceSimilarity for Fixed {
        fn tag(&self) -> &str {
            "fixed"
        }
        fn native_range(&self) -> (f64, f64) {
            (-1.0, 1.0)
        }
        fn similarity(&self, _: &str, _: &str) -> std::result::Result<f64, AdapterError> {
            Ok(self.0)
        }
    }

    #[test]
    fn affine_map_and_clamp() {
        assert_eq!(semantic_similarity("a", "b", &Fixed(-1.0)).unwrap(), 0.0);
        assert_eq!(semantic_similarity("a", "b", &Fixed(1.0)).unwrap(), 1.0);
        assert_eq!(semantic_similarity("a", "b", &Fixed(0.0)).unwrap(), 0.5);
        assert_eq!(semantic_similarity("a", "b", &Fixed(3.0)).unwrap(), 1.0);
        assert!(semantic_similarity("a", "b", &Fixed(f64::NAN)).is_err());
    }

    #[test]
    fn lexical_ordering() {
        let sts = LexicalOverlapSts;
        let base = "Person speaks at a rally in location";
        assert_eq!(semantic_similarity(base, base, &sts).unwrap(), 1.0);
        let para = semantic_similarity(base, "At a rally in location, person talks", &sts).unwrap();
        let other = semantic_similarity(base, "Flood water covers farmland near the river", &sts).unwrap();
        assert!(para > other);
        let ab = sts.similarity(base, "Person talks").unwrap();
        let ba = sts.similarity("Person talks", base).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn embedding_cosine_identity() {
        let sts = EmbeddingCosineSts::new(crate::encoders::HashedBowEmbedder);
        let s = semantic_similarity("red car on fire", "red car on fire", &sts).unwrap();
        assert!(s >= 0.99);
    }
}
