//! Serialization of extracted pairs into the canonical key/value XML, and the
//! reverse reading used by round-trip checks and the conversion report.

use std::collections::HashMap;

use super::extract::KeyValuePair;
use super::StructureError;
use crate::dictionary::{Dictionary, SynsetId};
use crate::xmlutil::{escape_text, parse_options, sanitize_name, XML_DECL};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XmlOptions {
    pub root: String,
    pub hierarchical: bool,
}

impl Default for XmlOptions {
    fn default() -> Self {
        Self {
            root: "document".to_string(),
            hierarchical: false,
        }
    }
}

/// Render pairs as `<root><Key>value</Key>...</root>` with one element per
/// pair in input order.
pub fn to_xml(pairs: &[KeyValuePair], dict: &Dictionary, hierarchical: bool) -> Result<Vec<u8>, StructureError> {
    to_xml_with(pairs, dict, &XmlOptions { hierarchical, ..Default::default() })
}

pub fn to_xml_with(pairs: &[KeyValuePair], dict: &Dictionary, opts: &XmlOptions) -> Result<Vec<u8>, StructureError> {
    let root = sanitize_name(&opts.root).ok_or_else(|| StructureError::Config(format!("invalid root name {:?}", opts.root)))?;
    let names = element_names(pairs, dict, opts.hierarchical)?;

    let mut out = String::from(XML_DECL);
    if pairs.is_empty() {
        out.push_str(&format!("<{root}/>\n"));
        return Ok(out.into_bytes());
    }
    out.push_str(&format!("<{root}>\n"));
    // ancestors currently open, outermost first
    let mut open: Vec<SynsetId> = Vec::new();
    for pair in pairs {
        let chain = if opts.hierarchical { dict.ancestors(&pair.synset_id) } else { Vec::new() };
        let shared = open.iter().zip(&chain).take_while(|(a, b)| a == b).count();
        while open.len() > shared {
            let id = open.pop().expect("non-empty");
            indent(&mut out, open.len() + 1);
            out.push_str(&format!("</{}>\n", names[&id]));
        }
        for id in &chain[shared..] {
            indent(&mut out, open.len() + 1);
            out.push_str(&format!("<{}>\n", names[id]));
            open.push(id.clone());
        }
        indent(&mut out, open.len() + 1);
        let name = &names[&pair.synset_id];
        out.push_str(&format!("<{name}>{}</{name}>\n", escape_text(&pair.value)));
    }
    while let Some(id) = open.pop() {
        indent(&mut out, open.len() + 1);
        out.push_str(&format!("</{}>\n", names[&id]));
    }
    out.push_str(&format!("</{root}>\n"));
    Ok(out.into_bytes())
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

/// Element name per synset used by `pairs` (and their ancestors when
/// hierarchical). Two synsets rendering to one name would make the output
/// ambiguous, so that is rejected.
fn element_names(
    pairs: &[KeyValuePair],
    dict: &Dictionary,
    hierarchical: bool,
) -> Result<HashMap<SynsetId, String>, StructureError> {
    let mut names: HashMap<SynsetId, String> = HashMap::new();
    let mut owners: HashMap<String, SynsetId> = HashMap::new();
    for pair in pairs {
        let mut ids = vec![pair.synset_id.clone()];
        if hierarchical {
            ids.extend(dict.ancestors(&pair.synset_id));
        }
        for id in ids {
            if names.contains_key(&id) {
                continue;
            }
            let synset = dict.get(&id).ok_or_else(|| StructureError::UnknownSynset(id.clone()))?;
            let name = sanitize_name(&synset.canonical).ok_or_else(|| StructureError::UnsanitizableName(id.clone()))?;
            if let Some(other) = owners.get(&name) {
                return Err(StructureError::NameCollision { name, first: other.clone(), second: id });
            }
            owners.insert(name.clone(), id.clone());
            names.insert(id, name);
        }
    }
    Ok(names)
}

/// Leaf elements of a key/value document as `(element name, text)` pairs in
/// document order.
pub fn read_pairs(xml: &[u8]) -> Result<Vec<(String, String)>, StructureError> {
    let text = std::str::from_utf8(xml).map_err(|e| StructureError::Xml(e.to_string()))?;
    let doc = roxmltree::Document::parse_with_options(text, parse_options()).map_err(|e| StructureError::Xml(e.to_string()))?;
    Ok(doc
        .root_element()
        .descendants()
        .skip(1)
        .filter(|n| n.is_element() && !n.children().any(|c| c.is_element()))
        .map(|n| (n.tag_name().name().to_string(), n.text().unwrap_or("").to_string()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::Synset;
    use crate::structure::HtmlPath;

    fn pair(id: &str, value: &str) -> KeyValuePair {
        KeyValuePair {
            synset_id: id.into(),
            key_text: String::new(),
            value: value.into(),
            key_path: HtmlPath::from_tags(&["p"]),
            value_path: HtmlPath::from_tags(&["p"]),
        }
    }

    #[test]
    fn sibling_elements() {
        let d = Dictionary::new("en", vec![Synset::new("K1", &["Name"])]).unwrap();
        let pairs = [pair("K1", "Audi"), pair("K1", "Ford"), pair("K1", "Volkswagen")];
        let xml = String::from_utf8(to_xml(&pairs, &d, false).unwrap()).unwrap();
        assert_eq!(
            xml,
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<document>\n  <Name>Audi</Name>\n  <Name>Ford</Name>\n  <Name>Volkswagen</Name>\n</document>\n"
        );
    }

    #[test]
    fn empty_pairs_give_bare_root() {
        let d = Dictionary::new("en", vec![Synset::new("K1", &["Name"])]).unwrap();
        let xml = to_xml(&[], &d, false).unwrap();
        assert!(String::from_utf8(xml).unwrap().ends_with("<document/>\n"));
    }

    #[test]
    fn hierarchical_nesting() {
        let d = Dictionary::new(
            "en",
            vec![Synset::new("K1", &["Contractor"]), Synset::new("K2", &["Name"]).with_parent("K1")],
        )
        .unwrap();
        let xml = String::from_utf8(to_xml(&[pair("K2", "Some contractor")], &d, true).unwrap()).unwrap();
        assert!(xml.contains("<Contractor>\n    <Name>Some contractor</Name>\n  </Contractor>"), "{xml}");
        let flat = String::from_utf8(to_xml(&[pair("K2", "Some contractor")], &d, false).unwrap()).unwrap();
        assert!(!flat.contains("Contractor"));
    }

    #[test]
    fn names_are_sanitized_and_values_escaped() {
        let d = Dictionary::new("en", vec![Synset::new("K1", &["Title of the document"]), Synset::new("K2", &["1.1 price"])]).unwrap();
        let xml = to_xml(&[pair("K1", "a < b & c"), pair("K2", "£1m")], &d, false).unwrap();
        let got = read_pairs(&xml).unwrap();
        assert_eq!(
            got,
            [
                ("TitleOfTheDocument".to_string(), "a < b & c".to_string()),
                ("_1.1Price".to_string(), "£1m".to_string())
            ]
        );
    }

    #[test]
    fn errors() {
        let d = Dictionary::new("en", vec![Synset::new("K1", &["::"]), Synset::new("K2", &["a b"]), Synset::new("K3", &["aB"])]).unwrap();
        assert!(matches!(to_xml(&[pair("K1", "x")], &d, false), Err(StructureError::UnsanitizableName(id)) if id.as_str() == "K1"));
        assert!(matches!(to_xml(&[pair("K9", "x")], &d, false), Err(StructureError::UnknownSynset(_))));
        assert!(matches!(to_xml(&[pair("K2", "x"), pair("K3", "y")], &d, false), Err(StructureError::NameCollision { .. })));
    }
}
