//! Frozen text embedding by signed trigram hashing.
//!
//! Text is normalized, wrapped in boundary sentinels, split into byte
//! trigrams, and each trigram adds ±1 to one of `dim` buckets. The sum is
//! scaled to unit length. The encoder has no trainable state.

use serde::{Deserialize, Serialize};

/// Byte that opens the padded string.
pub const START_SENTINEL: u8 = 0x02;
/// Byte that closes the padded string.
pub const END_SENTINEL: u8 = 0x03;

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_SEED: u64 = 0x5EED;

/// Lowercases and strips `raw` down to `[a-z0-9 ]`.
///
/// ASCII punctuation and whitespace act as word separators; non-ASCII
/// characters are dropped without leaving a gap. Runs of separators collapse
/// to one space and the result is trimmed.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars() {
        if ch.is_ascii_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch.to_ascii_lowercase());
        } else if ch.is_ascii() {
            pending_space = true;
        }
    }
    out
}

/// [`normalize_text`] for arbitrary bytes; invalid UTF-8 sequences are dropped.
pub fn normalize_bytes(raw: &[u8]) -> String {
    normalize_text(&String::from_utf8_lossy(raw))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbedding(Vec<f32>);

impl TextEmbedding {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f32 {
        self.0.iter().map(|v| v * v).sum::<f32>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextEncoder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for TextEncoder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            seed: DEFAULT_SEED,
        }
    }
}

/// Seeded FNV-1a over the trigram followed by the splitmix64 finalizer.
pub fn trigram_hash(seed: u64, trigram: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in trigram {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

impl TextEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    /// Bucket in `[0, dim)` and sign for one trigram. The top hash bit picks
    /// the sign, the remainder modulo `dim` picks the bucket.
    pub fn slot(&self, trigram: &[u8]) -> (usize, f32) {
        let h = trigram_hash(self.seed, trigram);
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        ((h % self.dim as u64) as usize, sign)
    }

    pub fn encode(&self, raw: &str) -> TextEmbedding {
        let text = normalize_text(raw);
        let mut v = vec![0.0f32; self.dim];
        if text.is_empty() {
            return TextEmbedding(v);
        }
        let mut padded = Vec::with_capacity(text.len() + 2);
        padded.push(START_SENTINEL);
        padded.extend_from_slice(text.as_bytes());
        padded.push(END_SENTINEL);
        let slots: Vec<(usize, f32)> = padded.windows(3).map(|t| self.slot(t)).collect();
        for &(bucket, sign) in &slots {
            v[bucket] += sign;
        }
        if v.iter().all(|&x| x == 0.0) {
            // Signs cancelled exactly; fall back to unsigned counts.
            for &(bucket, _) in &slots {
                v[bucket] += 1.0;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        TextEmbedding(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_text("Click the LOGIN button!"), "click the login button");
        assert_eq!(normalize_text("  Héllo--World  "), "hllo world");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("a\t\tb\nc"), "a b c");
        assert_eq!(normalize_bytes(b"ok\xff\xfeay"), "okay");
    }

    #[test]
    fn empty_text_encodes_to_zero() {
        let enc = TextEncoder::default();
        assert!(enc.encode("").is_zero());
        assert!(enc.encode("!!! ...").is_zero());
        assert_eq!(enc.encode("").as_slice().len(), DEFAULT_DIM);
    }

    #[test]
    fn near_strings_differ() {
        let enc = TextEncoder::default();
        assert_ne!(enc.encode("abc"), enc.encode("abd"));
    }

    #[test]
    fn seed_changes_embedding() {
        let a = TextEncoder::new(64, 1).encode("login");
        let b = TextEncoder::new(64, 2).encode("login");
        assert_ne!(a, b);
    }

    proptest! {
        #[test]
        fn norm_is_zero_or_one(s in ".{0,40}") {
            let e = TextEncoder::default().encode(&s);
            let n = e.norm();
            prop_assert!(n == 0.0 || (n - 1.0).abs() <= 1e-5, "norm {}", n);
            prop_assert_eq!(n == 0.0, normalize_text(&s).is_empty());
        }

        #[test]
        fn equal_after_normalization(s in "[a-zA-Z0-9 ,.!-]{0,30}") {
            let enc = TextEncoder::default();
            prop_assert_eq!(enc.encode(&s), enc.encode(&normalize_text(&s)));
        }

        #[test]
        fn normalized_alphabet(s in any::<String>()) {
            let n = normalize_text(&s);
            prop_assert!(n.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b' '));
            prop_assert!(!n.contains("  ") && !n.starts_with(' ') && !n.ends_with(' '));
        }
    }
}
