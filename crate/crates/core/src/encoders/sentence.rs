use std::collections::{HashMap, HashSet};
use std::sync::{Arc, RwLock};

use sha2::{Digest, Sha256};

use crate::util::{caption_sha256, sha256_hex};
use crate::{AdapterError, Error, Result, SENTENCE_DIM};

/// Frozen sentence embedding adapter.
pub trait SentenceEmbedder: Send + Sync {
    fn tag(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> std::result::Result<Vec<f32>, AdapterError>;
    fn fingerprint(&self) -> String;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSentenceVector {
    pub values: Vec<f32>,
    pub embedder_tag: String,
}

impl RawSentenceVector {
    pub fn new(values: Vec<f32>, embedder_tag: impl Into<String>) -> Result<Self> {
        if values.len() != SENTENCE_DIM {
            return Err(Error::Dimension {
                expected: SENTENCE_DIM,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sentence vector"));
        }
        Ok(Self {
            values,
            embedder_tag: embedder_tag.into(),
        })
    }
}

/// Sentence vectors keyed by (embedder tag, caption sha256). Safe for
/// concurrent readers; inserts take a short write lock.
#[derive(Debug, Default)]
pub struct SentenceCache {
    entries: RwLock<HashMap<(String, String), Arc<RawSentenceVector>>>,
}

impl SentenceCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, tag: &str, sha: &str) -> Option<Arc<RawSentenceVector>> {
        self.entries
            .read()
            .expect("sentence cache poisoned")
            .get(&(tag.to_string(), sha.to_string()))
            .cloned()
    }

    pub fn insert(&self, sha: String, v: RawSentenceVector) -> Arc<RawSentenceVector> {
        let v = Arc::new(v);
        self.entries
            .write()
            .expect("sentence cache poisoned")
            .insert((v.embedder_tag.clone(), sha), Arc::clone(&v));
        v
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("sentence cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Embeds `text`, consulting and filling `cache`.
pub fn embed_sentence(
    text: &str,
    embedder: &dyn SentenceEmbedder,
    cache: &SentenceCache,
) -> Result<Arc<RawSentenceVector>> {
    if text.trim().is_empty() {
        return Err(Error::Empty("sentence"));
    }
    let sha = caption_sha256(text);
    if let Some(v) = cache.get(embedder.tag(), &sha) {
        return Ok(v);
    }
    let v = RawSentenceVector::new(embedder.embed(text)?, embedder.tag())?;
    Ok(cache.insert(sha, v))
}

pub const HASHED_BOW_TAG: &str = "hashbow-512";

const STOP_WORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "at", "to", "and", "or", "is", "are", "was", "were", "by",
    "for", "with", "as", "its", "it", "this", "that", "from",
];

/// Lowercased alphanumeric tokens without stop words.
pub fn content_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOP_WORDS.contains(&t.as_str()))
        .collect()
}

/// Feature-hashing bag of words: every content token adds weight to two
/// hashed buckets; the result is L2-normalized and non-negative.
#[derive(Debug, Clone, Default)]
pub struct HashedBowEmbedder;

impl HashedBowEmbedder {
    fn buckets(token: &str) -> [usize; 2] {
        let d = Sha256::digest(token.as_bytes());
        let a = u64::from_le_bytes(d[0..8].try_into().expect("8 bytes"));
        let b = u64::from_le_bytes(d[8..16].try_into().expect("8 bytes"));
        [(a % SENTENCE_DIM as u64) as usize, (b % SENTENCE_DIM as u64) as usize]
    }
}

impl SentenceEmbedder for HashedBowEmbedder {
    fn tag(&self) -> &str {
        HASHED_BOW_TAG
    }

    fn dim(&self) -> usize {
        SENTENCE_DIM
    }

    fn embed(&self, text: &str) -> std::result::Result<Vec<f32>, AdapterError> {
        let mut v = vec![0f64; SENTENCE_DIM];
        let tokens = content_tokens(text);
        let unique: HashSet<&str> = tokens.iter().map(String::as_str).collect();
        if unique.is_empty() {
            return Err(AdapterError::fatal(HASHED_BOW_TAG, "no content tokens"));
        }
        for t in &tokens {
            for b in Self::buckets(t) {
                v[b] += 1.0;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v.iter().map(|x| (x / norm) as f32).collect())
    }

    fn fingerprint(&self) -> String {
        sha256_hex(format!("{HASHED_BOW_TAG}:{}", STOP_WORDS.join(",")))
    }
}
