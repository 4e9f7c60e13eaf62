//! Target schema, XPath enumeration of sample XML, expert binding sessions
//! and the mapping file that drives the engine.

mod file;
mod plan;
mod schema;
mod session;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::xpath::{walk_paths, XPathError};

pub use file::{next_version, parse_version, today, MappingFile, MappingNode, CONVERSION_KEY, XPATH_KEY};
pub use plan::{compile, link_for, AttributePlan, EntityPlan, Link, MappingPlan, Source};
pub use schema::{load_schema, FieldType, SchemaNode};
pub use session::{MappingSession, Sample, SessionEdit};

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("mapping format error: {0}")]
    Format(String),
    #[error("bad mapping version {0:?}, expected YYYY.MM.DD.NN")]
    Version(String),
    #[error("mapping does not fit the schema: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("unknown schema path {0}")]
    UnknownSchemaPath(String),
    #[error("invalid binding: {0}")]
    InvalidBinding(String),
    #[error(transparent)]
    XPath(#[from] XPathError),
    #[error("XML parse error at line {line}: {message}")]
    Xml { line: u32, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct XPathSample {
    pub xpath: String,
    pub sample: String,
}

pub fn parse_xml(bytes: &[u8]) -> Result<roxmltree::Document<'_>, MappingError> {
    let text = std::str::from_utf8(bytes).map_err(|e| MappingError::Xml {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count() as u32,
        message: format!("invalid UTF-8: {e}"),
    })?;
    roxmltree::Document::parse_with_options(text, crate::xmlutil::parse_options()).map_err(|e| MappingError::Xml {
        line: e.pos().row,
        message: e.to_string(),
    })
}

/// Distinct non-empty paths of a document with the first value seen for each,
/// in order of first appearance.
pub fn enumerate_xpaths(xml: &[u8]) -> Result<Vec<XPathSample>, MappingError> {
    let doc = parse_xml(xml)?;
    let mut seen: IndexMap<String, String> = IndexMap::new();
    for (path, value) in walk_paths(&doc) {
        seen.entry(path).or_insert(value);
    }
    Ok(seen.into_iter().map(|(xpath, sample)| XPathSample { xpath, sample }).collect())
}

/// Parse a mapping file and check it against `schema` with the same rules the
/// engine applies.
pub fn import_mapping(bytes: &[u8], schema: &SchemaNode) -> Result<MappingFile, MappingError> {
    import_plan(bytes, schema).map(|p| p.mapping)
}

pub fn import_plan(bytes: &[u8], schema: &SchemaNode) -> Result<MappingPlan, MappingError> {
    let file = MappingFile::parse(bytes)?;
    compile(&file, schema)
}

pub fn export_mapping(session: &mut MappingSession) -> Vec<u8> {
    session.export()
}
