use std::collections::{BTreeMap, HashSet};

const STOPWORDS: &str = include_str!("../../data/stopwords.txt");

/// Parses a stopword list: one token per line, blank lines and `#` comments
/// ignored, tokens lowercased.
pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

/// The bundled English stopword list.
pub fn default_stopwords() -> HashSet<String> {
    parse_stopwords(STOPWORDS)
}

/// Token counts over `texts`, most frequent first, ties alphabetical.
///
/// Tokens are maximal runs of alphabetic characters, lowercased, at least
/// three characters long and not in `stopwords`.
pub fn word_frequencies(texts: &[impl AsRef<str>], stopwords: &HashSet<String>) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        for token in text.as_ref().split(|c: char| !c.is_alphabetic()) {
            if token.chars().count() < 3 {
                continue;
            }
            let token = token.to_lowercase();
            if stopwords.contains(&token) {
                continue;
            }
            *counts.entry(token).or_default() += 1;
        }
    }
    let mut out: Vec<(String, usize)> = counts.into_iter().collect();
    // BTreeMap iteration is already alphabetical; a stable sort keeps it for ties.
    out.sort_by_key(|(_, n)| std::cmp::Reverse(*n));
    out
}
