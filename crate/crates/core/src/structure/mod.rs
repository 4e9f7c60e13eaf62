//! HTML structure analysis: element paths, similarities, dictionary-driven
//! key/value extraction and canonical XML output.

mod extract;
mod path;
mod similarity;
mod xml;

use thiserror::Error;

use crate::dictionary::{Dictionary, SynsetId};

pub use extract::{
    extract, extract_pairs, extract_with, key_similarity, match_key, ElementRewrite, ExtractedNode, Extraction,
    ExtractionConfig, KeyMatcher, KeyValuePair, KeylessRule, LinkSimilarity, NodeRole, PathPattern, RescueRules,
};
pub use path::{
    build_paths, build_paths_from_str, build_paths_with_charset, decode_html, sniff_meta_charset, HtmlPath, PathStep,
    PathStrategy, TextNode,
};
pub use similarity::{
    levenshtein, normalized_edit_similarity, path_edit_similarity, path_prefix_similarity, prefix_similarity,
    string_similarity,
};
pub use xml::{read_pairs, to_xml, to_xml_with, XmlOptions};

#[derive(Debug, Error)]
pub enum StructureError {
    #[error("cannot decode document as {charset}")]
    Encoding { charset: String },
    #[error("structure config error: {0}")]
    Config(String),
    #[error("synset {0} is not in the dictionary")]
    UnknownSynset(SynsetId),
    #[error("synset {0} has no usable XML element name")]
    UnsanitizableName(SynsetId),
    #[error("synsets {first} and {second} both render as <{name}>")]
    NameCollision { name: String, first: SynsetId, second: SynsetId },
    #[error("XML error: {0}")]
    Xml(String),
}

/// Decode, extract and serialize one HTML document.
pub fn analyze(
    html: &[u8],
    charset: Option<&str>,
    dict: &Dictionary,
    config: &ExtractionConfig,
    xml: &XmlOptions,
) -> Result<(Extraction, Vec<u8>), StructureError> {
    config.validate()?;
    let nodes = build_paths_with_charset(html, charset, config.strategy)?;
    let extraction = extract(&nodes, dict, config);
    let bytes = to_xml_with(&extraction.pairs, dict, xml)?;
    Ok((extraction, bytes))
}
