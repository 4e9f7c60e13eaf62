use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dictionary::SynsetId;
use crate::structure::{Extraction, NodeRole};

/// Rule printed above and below each document in the text report.
pub const REPORT_SEPARATOR: &str = "-----------------------------------------------------------";

/// How much of one HTML document made it into the key/value XML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConversionReport {
    pub document: String,
    pub matched: Vec<SynsetId>,
    pub missing: Vec<SynsetId>,
    /// Text that was converted (keys, values, keyless values), in document
    /// order.
    pub converted_text: Vec<String>,
    /// Text inside the analyzed root that no key claimed, in document order.
    pub orphan_text: Vec<String>,
    /// Converted characters over all characters inside the root; 1.0 when
    /// there is no text at all.
    pub conversion_rate: f64,
}

impl ConversionReport {
    /// Human-readable form: the converted text, one `<Kid>:  Missing` line
    /// per missing key, then the orphan text indented, between separators.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(REPORT_SEPARATOR);
        out.push('\n');
        for line in &self.converted_text {
            out.push_str(line);
            out.push('\n');
        }
        if !self.missing.is_empty() || !self.orphan_text.is_empty() {
            out.push('\n');
        }
        for k in &self.missing {
            out.push_str(&format!("<{k}>:  Missing\n"));
        }
        for t in &self.orphan_text {
            out.push_str("   ");
            out.push_str(t);
            out.push('\n');
        }
        out.push_str(REPORT_SEPARATOR);
        out.push('\n');
        out
    }
}

pub fn conversion_report(document: &str, extraction: &Extraction, expected: &[SynsetId]) -> ConversionReport {
    let matched: BTreeSet<SynsetId> = extraction.pairs.iter().map(|p| p.synset_id.clone()).collect();
    let missing = expected
        .iter()
        .filter(|k| !matched.contains(*k))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut converted_text = Vec::new();
    let mut orphan_text = Vec::new();
    let (mut converted_chars, mut total_chars) = (0usize, 0usize);
    for node in &extraction.nodes {
        let chars = node.text.chars().count();
        match node.role {
            NodeRole::OutsideRoot => continue,
            NodeRole::Orphan => orphan_text.push(node.text.clone()),
            NodeRole::Key(_) | NodeRole::Value(_) | NodeRole::Keyless(_) => {
                converted_chars += chars;
                converted_text.push(node.text.clone());
            }
        }
        total_chars += chars;
    }
    let conversion_rate = if total_chars == 0 { 1.0 } else { converted_chars as f64 / total_chars as f64 };
    ConversionReport {
        document: document.to_string(),
        matched: matched.into_iter().collect(),
        missing,
        converted_text,
        orphan_text,
        conversion_rate,
    }
}

/// Keys matched in at least `min_doc_ratio` of a calibration sample, used as
/// the expected key list for documents of the same template.
pub fn expected_keys(sample: &[Extraction], min_doc_ratio: f64) -> Vec<SynsetId> {
    if sample.is_empty() {
        return Vec::new();
    }
    let mut docs_with: BTreeMap<SynsetId, usize> = BTreeMap::new();
    for e in sample {
        let keys: BTreeSet<&SynsetId> = e.pairs.iter().map(|p| &p.synset_id).collect();
        for k in keys {
            *docs_with.entry(k.clone()).or_default() += 1;
        }
    }
    docs_with
        .into_iter()
        .filter(|(_, n)| *n as f64 / sample.len() as f64 >= min_doc_ratio)
        .map(|(k, _)| k)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{Dictionary, Synset};
    use crate::structure::{build_paths_from_str, extract, ExtractionConfig, PathStrategy};

    fn dict() -> Dictionary {
        Dictionary::new("da", vec![Synset::new("K1", &["Navn"]), Synset::new("K185", &["Ordregivende myndighed"])]).unwrap()
    }

    #[test]
    fn missing_key_line() {
        let html = "<html><body><div><p>Navn:</p><p>Maj Calmer Kristensen</p></div>\
                    <ul><li>- v. Finance Administration), telephone, email and URL.</li></ul></body></html>";
        let nodes = build_paths_from_str(html, PathStrategy::UniqueTag);
        let ex = extract(&nodes, &dict(), &ExtractionConfig::default());
        let r = conversion_report("doc1", &ex, &["K1".into(), "K185".into()]);
        assert_eq!(r.missing, [SynsetId::from("K185")]);
        let text = r.render();
        assert!(text.lines().any(|l| l == "<K185>:  Missing"), "{text}");
        assert!(text.contains("   - v. Finance Administration), telephone, email and URL."), "{text}");
        assert_eq!(text.lines().next().unwrap().len(), 59);
        let converted: usize = "Navn:Maj Calmer Kristensen".chars().count();
        let total = converted + "- v. Finance Administration), telephone, email and URL.".chars().count();
        assert!((r.conversion_rate - converted as f64 / total as f64).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cases() {
        let empty = Extraction { pairs: vec![], nodes: vec![] };
        let r = conversion_report("e", &empty, &[]);
        assert_eq!(r.conversion_rate, 1.0);
        assert!(r.missing.is_empty());
        let nodes = build_paths_from_str("<p>Navn:</p><p>X</p>", PathStrategy::UniqueTag);
        let ex = extract(&nodes, &dict(), &ExtractionConfig::default());
        let r = conversion_report("d", &ex, &["K1".into()]);
        assert!(r.missing.is_empty());
        assert_eq!(r.conversion_rate, 1.0);
    }

    #[test]
    fn calibration_threshold() {
        let d = dict();
        let cfg = ExtractionConfig::default();
        let docs = ["<p>Navn:</p><p>A</p>", "<p>Navn:</p><p>B</p>", "<p>Ordregivende myndighed:</p><p>C</p>"];
        let sample: Vec<Extraction> = docs
            .iter()
            .map(|h| extract(&build_paths_from_str(h, PathStrategy::UniqueTag), &d, &cfg))
            .collect();
        assert_eq!(expected_keys(&sample, 0.5), [SynsetId::from("K1")]);
        assert_eq!(expected_keys(&sample, 0.3).len(), 2);
        assert!(expected_keys(&[], 0.5).is_empty());
    }
}
