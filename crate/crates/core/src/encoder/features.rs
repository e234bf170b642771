use crate::text::stable_hash;

/// Byte used to join n-gram members before hashing; cannot occur in tokens.
pub const FEATURE_SEPARATOR: u8 = 0x1f;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Symbol {
    Token(String),
    Separator,
}

/// Maps every n-gram of every requested order to a bucket.
///
/// Ordinary n-grams land in `[0, buckets - 1)`. The lone separator unigram
/// owns the reserved bucket `buckets - 1`; n-grams spanning the separator
/// hash a marker byte that normalized text never contains.
pub fn hash_ngrams(symbols: &[Symbol], orders: &[usize], buckets: usize) -> Vec<u32> {
    let reserved = (buckets - 1) as u32;
    let vocab = (buckets - 1) as u64;
    let mut out = Vec::new();
    let mut key = Vec::new();
    for &n in orders {
        if n > symbols.len() {
            continue;
        }
        for window in symbols.windows(n) {
            if n == 1 && window[0] == Symbol::Separator {
                out.push(reserved);
                continue;
            }
            key.clear();
            key.extend_from_slice(n.to_string().as_bytes());
            for s in window {
                key.push(FEATURE_SEPARATOR);
                match s {
                    Symbol::Token(t) => key.extend_from_slice(t.as_bytes()),
                    Symbol::Separator => key.push(0),
                }
            }
            out.push((stable_hash(&key) % vocab) as u32);
        }
    }
    out
}
