//! Text canonicalization and word segmentation.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use unicode_normalization::UnicodeNormalization;
use unicode_segmentation::UnicodeSegmentation;

/// NFC-normalizes and trims `text`.
///
/// This is the identity used for prompt grouping, the exact-match
/// equivalence predicate and provider cache keys.
pub fn canonicalize(text: &str) -> String {
    text.trim().nfc().collect::<String>().trim().into()
}

/// Lowercased unique words of `text`, in sorted order.
///
/// Segmentation follows Unicode word boundaries; segments with no
/// alphanumeric character are dropped. Words found in `stopwords` are
/// removed when a list is given.
pub fn unique_words(text: &str, stopwords: Option<&BTreeSet<String>>) -> Vec<String> {
    let normalized: String = text.nfc().collect();
    let mut words = BTreeSet::new();
    for word in normalized.unicode_words() {
        let lower = word.to_lowercase();
        if stopwords.is_some_and(|s| s.contains(&lower)) {
            continue;
        }
        words.insert(lower);
    }
    words.into_iter().collect()
}
