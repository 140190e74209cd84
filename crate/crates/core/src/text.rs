//! Small text helpers shared across modules: normalization, tokenization,
//! content-word extraction and a stable 64-bit hash.

use sha2::{Digest, Sha256};

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "of", "to", "is", "are", "was", "were", "be", "with", "for",
    "at", "by", "it", "its", "this", "that", "these", "those", "as", "from", "there", "their",
    "has", "have", "very", "some", "into", "onto", "each", "all", "while", "which", "who",
    "his", "her", "they", "them", "also", "than", "then", "so", "but", "not",
];

/// Lowercase, collapse runs of whitespace, trim.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercase, whitespace-collapsed form with trailing sentence punctuation removed.
pub fn normalize_prompt(text: &str) -> String {
    let lowered = normalize_ws(&text.to_lowercase());
    lowered
        .trim_end_matches(|c: char| c == '.' || c == '!' || c == ';' || c.is_whitespace())
        .to_string()
}

/// Lowercase alphanumeric tokens (hyphens and apostrophes split words).
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// Tokens that are not stopwords, in order of appearance (duplicates kept).
pub fn content_words(text: &str) -> Vec<String> {
    tokens(text).into_iter().filter(|t| !is_stopword(t)).collect()
}

/// Lowercase alphanumeric-only key used for duplicate detection.
pub fn alnum_key(text: &str) -> String {
    text.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(|c| c.to_lowercase())
        .collect()
}

/// Whether `needle` occurs in `haystack` after whitespace normalization.
pub fn contains_normalized(haystack: &str, needle: &str) -> bool {
    normalize_ws(haystack).contains(&normalize_ws(needle))
}

/// Hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// FNV-1a over bytes followed by a splitmix64 finalizer. Stable across
/// platforms and toolchains, unlike `std::hash::DefaultHasher`.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // separator so ("ab","c") and ("a","bc") differ
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine a seed with any number of salts into a new seed.
pub fn mix_seed(seed: u64, salts: &[u64]) -> u64 {
    salts
        .iter()
        .fold(splitmix64(seed), |acc, s| splitmix64(acc ^ splitmix64(*s)))
}

/// Map a hash to the unit interval [0, 1).
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_prompt_strips_trailing_period() {
        assert_eq!(normalize_prompt("  A Red   Apple. "), "a red apple");
    }

    #[test]
    fn content_words_skip_stopwords() {
        assert_eq!(content_words("a cat on the mat"), vec!["cat", "on", "mat"]);
    }

    #[test]
    fn alnum_key_ignores_punctuation_and_case() {
        assert_eq!(alnum_key("Only 3, not SIX!"), "only3notsix");
    }

    #[test]
    fn stable_hash_separates_parts() {
        assert_ne!(stable_hash(&[b"ab", b"c"]), stable_hash(&[b"a", b"bc"]));
        assert_eq!(stable_hash(&[b"x"]), stable_hash(&[b"x"]));
    }

    #[test]
    fn unit_interval_bounds() {
        assert!(unit_interval(u64::MAX) < 1.0);
        assert_eq!(unit_interval(0), 0.0);
    }
}
