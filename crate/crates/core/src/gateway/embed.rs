use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::{Embedder, GatewayError};

/// Dimension of the hashed bag-of-words test double.
pub const HASHED_BOW_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        EmbeddingVector { values }
    }

    /// The vector assigned to empty text; its cosine with anything is 0.
    pub fn zero(dim: usize) -> Self {
        EmbeddingVector {
            values: vec![0.0; dim],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Offline embedder: whitespace tokens hashed into 256 buckets, L2-normalised.
///
/// Deterministic and insensitive to word order. Stands in for a real
/// embedding model in every offline test.
#[derive(Debug, Clone, Default)]
pub struct HashedBowEmbedder;

impl HashedBowEmbedder {
    pub fn vectorize(text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; HASHED_BOW_DIM];
        for token in text.split_whitespace() {
            values[(fnv1a(token.as_bytes()) % HASHED_BOW_DIM as u64) as usize] += 1.0;
        }
        let norm = values.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector::new(values)
    }
}

impl Embedder for HashedBowEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        Ok(Self::vectorize(text))
    }
}

type Slot = Arc<Mutex<Option<EmbeddingVector>>>;

/// Memoises another embedder per content string.
///
/// Concurrent requests for the same text wait for a single inner call; a
/// failed call leaves the slot empty so the next caller retries.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: Mutex<HashMap<String, Slot>>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        CachedEmbedder {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached_len(&self) -> usize {
        let slots: Vec<Slot> = self.cache.lock().unwrap_or_else(|e| e.into_inner()).values().cloned().collect();
        slots
            .iter()
            .filter(|s| s.lock().unwrap_or_else(|e| e.into_inner()).is_some())
            .count()
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        let slot = self
            .cache
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(text.to_string())
            .or_default()
            .clone();
        let mut value = slot.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(v) = value.as_ref() {
            return Ok(v.clone());
        }
        let v = self.inner.embed(text)?;
        *value = Some(v.clone());
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn hashed_bow_is_deterministic_and_normalised() {
        let a = HashedBowEmbedder::vectorize("the quick brown fox");
        let b = HashedBowEmbedder::vectorize("the quick brown fox");
        assert_eq!(a, b);
        assert_eq!(a.dim(), HASHED_BOW_DIM);
        assert!((a.norm_squared() - 1.0).abs() < 1e-12);
        assert_eq!(a, HashedBowEmbedder::vectorize("fox brown quick the"));
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let z = HashedBowEmbedder::vectorize("");
        assert!(z.is_zero());
        assert!(HashedBowEmbedder::vectorize("   \n").is_zero());
    }

    struct Counting(AtomicUsize);

    impl Embedder for Counting {
        fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(HashedBowEmbedder::vectorize(text))
        }
    }

    #[test]
    fn cache_hits_skip_inner() {
        let cached = CachedEmbedder::new(Counting(AtomicUsize::new(0)));
        for _ in 0..5 {
            cached.embed("same text").unwrap();
        }
        cached.embed("other").unwrap();
        assert_eq!(cached.inner.0.load(Ordering::SeqCst), 2);
        assert_eq!(cached.cached_len(), 2);
    }

    #[test]
    fn concurrent_misses_share_one_call() {
        struct Slow(AtomicUsize);
        impl Embedder for Slow {
            fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                std::thread::sleep(std::time::Duration::from_millis(20));
                Ok(HashedBowEmbedder::vectorize(text))
            }
        }
        let cached = CachedEmbedder::new(Slow(AtomicUsize::new(0)));
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| cached.embed("shared").unwrap());
            }
        });
        assert_eq!(cached.inner.0.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn failures_are_not_cached() {
        struct FailOnce(AtomicUsize);
        impl Embedder for FailOnce {
            fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
                if self.0.fetch_add(1, Ordering::SeqCst) == 0 {
                    return Err(GatewayError::Transport { attempts: 1, message: "down".into() });
                }
                Ok(HashedBowEmbedder::vectorize(text))
            }
        }
        let cached = CachedEmbedder::new(FailOnce(AtomicUsize::new(0)));
        assert!(cached.embed("x").is_err());
        assert_eq!(cached.cached_len(), 0);
        assert!(cached.embed("x").is_ok());
        assert_eq!(cached.cached_len(), 1);
    }
}
