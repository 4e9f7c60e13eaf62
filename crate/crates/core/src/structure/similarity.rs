//! Levenshtein-based string and path similarities, all normalized to [0, 1].

use super::path::HtmlPath;

/// Edit distance between two sequences, two-row dynamic programming.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let cost = usize::from(x != y);
            curr[j + 1] = (prev[j] + cost).min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// `1 - lev / max_len`, with two empty inputs counting as identical.
pub fn normalized_edit_similarity<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let max = a.len().max(b.len());
    if max == 0 {
        return 1.0;
    }
    // lev <= max always holds, so the result stays in [0, 1]
    1.0 - levenshtein(a, b) as f64 / max as f64
}

/// Character-level similarity between two strings.
pub fn string_similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    normalized_edit_similarity(&a, &b)
}

/// Edit-distance similarity over rendered step tokens.
pub fn path_edit_similarity(p: &HtmlPath, q: &HtmlPath) -> f64 {
    normalized_edit_similarity(&p.tokens(), &q.tokens())
}

/// Length of the common leading run of tokens divided by the longer length.
pub fn prefix_similarity<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let max = a.len().max(b.len());
    if max == 0 {
        return 1.0;
    }
    let lcp = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    lcp as f64 / max as f64
}

pub fn path_prefix_similarity(p: &HtmlPath, q: &HtmlPath) -> f64 {
    prefix_similarity(&p.tokens(), &q.tokens())
}
