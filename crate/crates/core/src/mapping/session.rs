use serde::{Deserialize, Serialize};

use super::file::{next_version, today, MappingFile, MappingNode};
use super::schema::{load_schema, SchemaNode};
use super::{enumerate_xpaths, MappingError, XPathSample};
use crate::xpath::{normalize, XPath};

/// One recorded change to a session draft. Replaying the log over the base
/// mapping reproduces the draft.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum SessionEdit {
    Bind { schema_path: String, xpath: String },
    Unbind { schema_path: String, xpath: String },
    MoveXPath { schema_path: String, xpath: String, index: usize },
    SetConversion { schema_path: String, from: String, to: String },
    RemoveConversion { schema_path: String, from: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub name: String,
    pub xml: String,
}

#[derive(Debug, Clone)]
pub struct MappingSession {
    schema: SchemaNode,
    base: MappingFile,
    draft: MappingFile,
    samples: Vec<Sample>,
    log: Vec<SessionEdit>,
    revision: u64,
    exported_revision: u64,
}

#[derive(Serialize, Deserialize)]
struct Persisted {
    schema: serde_json::Value,
    base: serde_json::Value,
    samples: Vec<Sample>,
    log: Vec<SessionEdit>,
}

impl MappingSession {
    pub fn new(schema: SchemaNode) -> Self {
        let base = MappingFile::new(next_version(None, today()));
        Self::with_base(schema, base)
    }

    /// Continue from an existing mapping, e.g. the previous iteration's file.
    pub fn from_mapping(schema: SchemaNode, mapping: MappingFile) -> Result<Self, MappingError> {
        let mut s = Self::with_base(schema, MappingFile::new(mapping.version.clone()));
        for (name, node) in &mapping.roots {
            s.check_tree(name, node)?;
        }
        s.base = mapping.clone();
        s.draft = mapping;
        Ok(s)
    }

    fn with_base(schema: SchemaNode, base: MappingFile) -> Self {
        Self {
            schema,
            draft: base.clone(),
            base,
            samples: Vec::new(),
            log: Vec::new(),
            revision: 0,
            exported_revision: 0,
        }
    }

    fn check_tree(&self, path: &str, node: &MappingNode) -> Result<(), MappingError> {
        if self.schema.find(path).is_none() {
            return Err(MappingError::UnknownSchemaPath(path.to_string()));
        }
        for (name, child) in &node.children {
            self.check_tree(&format!("{path}.{name}"), child)?;
        }
        Ok(())
    }

    pub fn schema(&self) -> &SchemaNode {
        &self.schema
    }

    pub fn draft(&self) -> &MappingFile {
        &self.draft
    }

    pub fn log(&self) -> &[SessionEdit] {
        &self.log
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Increases by one with every edit that changed the draft.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn add_sample(&mut self, name: impl Into<String>, xml: impl Into<String>) -> Result<Vec<XPathSample>, MappingError> {
        let xml = xml.into();
        let paths = enumerate_xpaths(xml.as_bytes())?;
        self.samples.push(Sample { name: name.into(), xml });
        Ok(paths)
    }

    pub fn bind(&mut self, schema_path: &str, xpath: &str) -> Result<bool, MappingError> {
        self.apply(SessionEdit::Bind { schema_path: schema_path.into(), xpath: xpath.into() })
    }

    pub fn unbind(&mut self, schema_path: &str, xpath: &str) -> Result<bool, MappingError> {
        self.apply(SessionEdit::Unbind { schema_path: schema_path.into(), xpath: xpath.into() })
    }

    pub fn set_conversion(&mut self, schema_path: &str, from: &str, to: &str) -> Result<bool, MappingError> {
        self.apply(SessionEdit::SetConversion { schema_path: schema_path.into(), from: from.into(), to: to.into() })
    }

    /// Apply an edit; returns whether the draft changed. No-op edits are not
    /// logged and do not bump the revision.
    pub fn apply(&mut self, edit: SessionEdit) -> Result<bool, MappingError> {
        let changed = apply_edit(&self.schema, &mut self.draft, &edit)?;
        if changed {
            self.log.push(edit);
            self.revision += 1;
        }
        Ok(changed)
    }

    /// Export the draft, stamping a new version when it changed since the
    /// previous export.
    pub fn export(&mut self) -> Vec<u8> {
        if self.revision != self.exported_revision {
            self.draft.version = next_version(Some(&self.draft.version), today());
            self.exported_revision = self.revision;
        }
        self.draft.to_json()
    }

    /// Rebuild the draft from the base mapping and the edit log.
    pub fn replay(&self) -> Result<MappingFile, MappingError> {
        let mut draft = self.base.clone();
        for e in &self.log {
            apply_edit(&self.schema, &mut draft, e)?;
        }
        Ok(draft)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let p = Persisted {
            schema: serde_json::to_value(&self.schema).expect("schema serializes"),
            base: self.base.to_value(),
            samples: self.samples.clone(),
            log: self.log.clone(),
        };
        serde_json::to_vec_pretty(&p).expect("session serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, MappingError> {
        let p: Persisted = serde_json::from_slice(bytes).map_err(|e| MappingError::Format(e.to_string()))?;
        let schema = load_schema(p.schema.to_string().as_bytes())?;
        let base = MappingFile::parse(p.base.to_string().as_bytes())?;
        let mut s = Self::from_mapping(schema, base)?;
        s.samples = p.samples;
        for e in p.log {
            s.apply(e)?;
        }
        Ok(s)
    }
}

fn node_mut<'a>(draft: &'a mut MappingFile, path: &str) -> &'a mut MappingNode {
    let mut parts = path.split('.');
    let root = parts.next().expect("validated path");
    let mut node = draft.roots.entry(root.to_string()).or_default();
    for p in parts {
        node = node.child_mut_or_default(p);
    }
    node
}

fn prune(node: &mut MappingNode) -> bool {
    node.children.retain(|_, c| !prune(c));
    node.xpaths.is_empty() && node.conversion.is_empty() && node.children.is_empty()
}

fn apply_edit(schema: &SchemaNode, draft: &mut MappingFile, edit: &SessionEdit) -> Result<bool, MappingError> {
    let path = match edit {
        SessionEdit::Bind { schema_path, .. }
        | SessionEdit::Unbind { schema_path, .. }
        | SessionEdit::MoveXPath { schema_path, .. }
        | SessionEdit::SetConversion { schema_path, .. }
        | SessionEdit::RemoveConversion { schema_path, .. } => schema_path.as_str(),
    };
    let target = schema.find(path).ok_or_else(|| MappingError::UnknownSchemaPath(path.to_string()))?;
    let changed = match edit {
        SessionEdit::Bind { xpath, .. } => {
            let x = normalize(xpath);
            let parsed = XPath::parse(&x)?;
            if target.is_entity() && parsed.is_attribute() {
                return Err(MappingError::InvalidBinding(format!(
                    "{path} is an entity; {x} selects an attribute value"
                )));
            }
            let node = node_mut(draft, path);
            if node.xpaths.contains(&x) {
                false
            } else {
                node.xpaths.push(x);
                true
            }
        }
        SessionEdit::Unbind { xpath, .. } => {
            let x = normalize(xpath);
            let node = node_mut(draft, path);
            let before = node.xpaths.len();
            node.xpaths.retain(|p| *p != x);
            node.xpaths.len() != before
        }
        SessionEdit::MoveXPath { xpath, index, .. } => {
            let x = normalize(xpath);
            let node = node_mut(draft, path);
            let Some(pos) = node.xpaths.iter().position(|p| *p == x) else {
                // node_mut may have created an empty node; a failed edit leaves no trace
                draft.roots.retain(|_, r| !prune(r));
                return Err(MappingError::InvalidBinding(format!("{x} is not bound to {path}")));
            };
            let to = (*index).min(node.xpaths.len() - 1);
            let item = node.xpaths.remove(pos);
            node.xpaths.insert(to, item);
            pos != to
        }
        SessionEdit::SetConversion { from, to, .. } => {
            if target.is_entity() {
                return Err(MappingError::InvalidBinding(format!("{path} is an entity; conversions apply to attributes")));
            }
            let node = node_mut(draft, path);
            node.conversion.insert(from.clone(), to.clone()).as_ref() != Some(to)
        }
        SessionEdit::RemoveConversion { from, .. } => node_mut(draft, path).conversion.shift_remove(from).is_some(),
    };
    draft.roots.retain(|_, r| !prune(r));
    Ok(changed)
}
