use std::collections::HashSet;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};

fn stop_words() -> &'static HashSet<&'static str> {
    static WORDS: OnceLock<HashSet<&'static str>> = OnceLock::new();
    WORDS.get_or_init(|| include_str!("../../data/stopwords_en.txt").lines().filter(|l| !l.is_empty()).collect())
}

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

pub fn is_stop_word(word: &str) -> bool {
    stop_words().contains(word)
}

/// Lowercased, stop-word-free, stemmed terms of `text`.
///
/// Words are maximal runs of alphanumerics and `_`. A word that splits into
/// several identifier parts (`mutex_lock`, `kfreeSkb`) contributes the whole
/// compound, lowercased and unstemmed, followed by each part. Parts and plain
/// words go through stop-word removal and the English Snowball stemmer.
pub fn preprocess(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split(|c: char| !(c.is_alphanumeric() || c == '_')) {
        let parts = identifier_parts(word);
        if parts.len() > 1 {
            out.push(word.to_lowercase());
        }
        for p in parts {
            let lower = p.to_lowercase();
            if is_stop_word(&lower) {
                continue;
            }
            // a stem can itself be a stop word ("wills" -> "will")
            let stem = stemmer().stem(&lower);
            if !is_stop_word(&stem) {
                out.push(stem.into_owned());
            }
        }
    }
    out
}

/// Splits on `_` and at camelCase boundaries. `HTTPServer` gives `HTTP`,
/// `Server`; `parse2ndArg` gives `parse2nd`, `Arg`.
fn identifier_parts(word: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    for piece in word.split('_').filter(|p| !p.is_empty()) {
        let chars: Vec<(usize, char)> = piece.char_indices().collect();
        let mut start = 0;
        for w in 1..chars.len() {
            let (i, c) = chars[w];
            let prev = chars[w - 1].1;
            let next_lower = chars.get(w + 1).is_some_and(|&(_, n)| n.is_lowercase());
            let boundary = c.is_uppercase() && (!prev.is_uppercase() || next_lower);
            if boundary {
                parts.push(&piece[start..i]);
                start = i;
            }
        }
        parts.push(&piece[start..]);
    }
    parts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_stop_words() {
        assert!(preprocess("").is_empty());
        assert!(preprocess("the a an of").is_empty());
        assert!(preprocess("  ,;{}  ").is_empty());
    }

    #[test]
    fn snake_case_keeps_compound_and_stems_parts() {
        assert_eq!(preprocess("mutex_lock releases locks"), ["mutex_lock", "mutex", "lock", "releas", "lock"]);
    }

    #[test]
    fn camel_case_and_acronyms() {
        assert_eq!(identifier_parts("kfreeSkb"), ["kfree", "Skb"]);
        assert_eq!(identifier_parts("HTTPServer"), ["HTTP", "Server"]);
        assert_eq!(identifier_parts("__init__"), ["init"]);
        assert_eq!(preprocess("getRefCount"), ["getrefcount", "get", "ref", "count"]);
    }

    #[test]
    fn deterministic_and_clean() {
        let t = "static int The_Device(struct usb_dev *dev) { return -EINVAL; }";
        let a = preprocess(t);
        assert_eq!(a, preprocess(t));
        assert!(a.iter().all(|w| !w.is_empty() && !is_stop_word(w) && *w == w.to_lowercase()));
    }
}
