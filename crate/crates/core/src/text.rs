//! Text normalization shared by key matching, term statistics and XPath
//! value extraction.

use std::sync::OnceLock;

use regex::Regex;

/// Trim and collapse every run of whitespace (including NBSP) to one space.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

fn section_prefix() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(section\s+)?\d+(\.\d+)*[:.)]?\s*").expect("valid section regex")
    })
}

/// Normalize a candidate key string.
///
/// Collapses whitespace, drops leading section numbering such as
/// `Section 1.2:` or `3.1)`, and strips trailing `:` / `=` separators.
pub fn normalize_key(text: &str) -> String {
    let collapsed = collapse_whitespace(text);
    let stripped = section_prefix().replace(&collapsed, "");
    let trimmed = stripped
        .trim_end_matches(|c: char| c == ':' || c == '=' || c.is_whitespace())
        .trim();
    trimmed.to_string()
}
