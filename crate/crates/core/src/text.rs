//! Text normalization, tokenization and the stable hash used for feature
//! bucketing and seed derivation.

use std::hash::Hasher;

use fnv::FnvHasher;
use unicode_normalization::UnicodeNormalization;

/// NFC, lowercase, and collapse runs of whitespace into a single space.
pub fn normalize(text: &str) -> String {
    let lowered: String = text.nfc().flat_map(char::to_lowercase).collect();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalizes and splits on whitespace and punctuation. Punctuation is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    normalize(text)
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// 64-bit FNV-1a over the raw bytes. Stable across platforms and releases.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Derives a child seed from a parent seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    seed ^ stable_hash(label.as_bytes())
}
