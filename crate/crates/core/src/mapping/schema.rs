use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};
use serde_json::Value;

use super::MappingError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldType {
    Model,
    TextField,
    NullBooleanField,
    DateTimeField,
    ForeignKey,
}

impl FieldType {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "Model" => Self::Model,
            "TextField" => Self::TextField,
            "NullBooleanField" => Self::NullBooleanField,
            "DateTimeField" => Self::DateTimeField,
            "ForeignKey" => Self::ForeignKey,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Model => "Model",
            Self::TextField => "TextField",
            Self::NullBooleanField => "NullBooleanField",
            Self::DateTimeField => "DateTimeField",
            Self::ForeignKey => "ForeignKey",
        }
    }

    /// Entities become tables; everything else is a column.
    pub fn is_entity(self) -> bool {
        matches!(self, Self::Model | Self::ForeignKey)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaNode {
    pub db: String,
    pub repetitive: bool,
    pub text: String,
    pub field_type: FieldType,
    pub nodes: Vec<SchemaNode>,
}

impl Serialize for SchemaNode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(None)?;
        m.serialize_entry("db", &self.db)?;
        m.serialize_entry("repetitive", if self.repetitive { "true" } else { "false" })?;
        m.serialize_entry("text", &self.text)?;
        m.serialize_entry("type", self.field_type.as_str())?;
        if self.field_type.is_entity() || !self.nodes.is_empty() {
            m.serialize_entry("nodes", &self.nodes)?;
        }
        m.end()
    }
}

impl SchemaNode {
    pub fn is_entity(&self) -> bool {
        self.field_type.is_entity()
    }

    pub fn child(&self, db: &str) -> Option<&SchemaNode> {
        self.nodes.iter().find(|n| n.db == db)
    }

    /// Resolve a dotted path such as `Entity1.attribute3.attribute3-1`; the
    /// first segment names this node.
    pub fn find(&self, path: &str) -> Option<&SchemaNode> {
        let mut parts = path.split('.');
        if parts.next()? != self.db {
            return None;
        }
        parts.try_fold(self, |node, part| node.child(part))
    }

    /// Every entity node with its dotted path, parents before children.
    pub fn entities(&self) -> Vec<(String, &SchemaNode)> {
        fn go<'a>(n: &'a SchemaNode, path: String, out: &mut Vec<(String, &'a SchemaNode)>) {
            out.push((path.clone(), n));
            for c in n.nodes.iter().filter(|c| c.is_entity()) {
                go(c, format!("{path}.{}", c.db), out);
            }
        }
        let mut out = Vec::new();
        go(self, self.db.clone(), &mut out);
        out
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("schema serializes")
    }
}

/// Parse and validate a schema document. Errors carry a JSON-pointer-like
/// location such as `$.nodes[2].type`.
pub fn load_schema(bytes: &[u8]) -> Result<SchemaNode, MappingError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| MappingError::Schema {
        path: "$".into(),
        message: e.to_string(),
    })?;
    let root = parse_node(&value, "$")?;
    if root.field_type != FieldType::Model {
        return Err(MappingError::Schema {
            path: "$.type".into(),
            message: format!("root must be a Model, found {}", root.field_type.as_str()),
        });
    }
    Ok(root)
}

fn parse_node(v: &Value, at: &str) -> Result<SchemaNode, MappingError> {
    let err = |path: String, message: String| MappingError::Schema { path, message };
    let obj = v.as_object().ok_or_else(|| err(at.into(), "expected an object".into()))?;
    let db = obj
        .get("db")
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| err(format!("{at}.db"), "missing or empty db name".into()))?
        .to_string();
    if db.contains('.') {
        return Err(err(format!("{at}.db"), format!("db name {db:?} may not contain '.'")));
    }
    let repetitive = match obj.get("repetitive") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(Value::String(s)) if s.eq_ignore_ascii_case("true") => true,
        Some(Value::String(s)) if s.eq_ignore_ascii_case("false") => false,
        Some(other) => return Err(err(format!("{at}.repetitive"), format!("expected a boolean, found {other}"))),
    };
    let text = obj.get("text").and_then(Value::as_str).unwrap_or(&db).to_string();
    let type_name = obj
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| err(format!("{at}.type"), "missing type".into()))?;
    let field_type =
        FieldType::parse(type_name).ok_or_else(|| err(format!("{at}.type"), format!("unknown type {type_name:?}")))?;
    let raw_nodes = match obj.get("nodes") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(a)) => a.clone(),
        Some(_) => return Err(err(format!("{at}.nodes"), "expected an array".into())),
    };
    if !field_type.is_entity() && !raw_nodes.is_empty() {
        return Err(err(format!("{at}.nodes"), format!("{} {db:?} cannot have child nodes", field_type.as_str())));
    }
    let mut nodes: Vec<SchemaNode> = Vec::with_capacity(raw_nodes.len());
    for (i, n) in raw_nodes.iter().enumerate() {
        let child = parse_node(n, &format!("{at}.nodes[{i}]"))?;
        if nodes.iter().any(|c| c.db == child.db) {
            return Err(err(format!("{at}.nodes[{i}].db"), format!("duplicate sibling db {:?}", child.db)));
        }
        nodes.push(child);
    }
    Ok(SchemaNode { db, repetitive, text, field_type, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A procurement notice schema.
    pub const PROCUREMENT_SCHEMA: &str = r#"{
"db": "Entity1",
"nodes": [
       { "db": "attribute1", "repetitive": "false", "text": "Name to display attribute1", "type": "TextField" },
       { "db": "attribute2", "repetitive": "false", "text": "Name to display attribute2", "type": "NullBooleanField" },
       { "db": "attribute3", "repetitive": "false", "text": "Name to display attribute3", "type": "ForeignKey",
         "nodes": [
            {"db": "attribute3-1", "repetitive": "false", "text": "Name to display attribute3-1", "type": "NullBooleanField"}
         ]
       }
       ],
"repetitive": "true",
"text": "Estimated value",
"type": "Model"
}"#;

    #[test]
    fn procurement_schema_loads() {
        let s = load_schema(PROCUREMENT_SCHEMA.as_bytes()).unwrap();
        assert_eq!(s.db, "Entity1");
        assert!(s.repetitive);
        assert_eq!(s.nodes.len(), 3);
        assert_eq!(s.nodes[2].field_type, FieldType::ForeignKey);
        assert_eq!(s.nodes[2].nodes.len(), 1);
        assert_eq!(s.find("Entity1.attribute3.attribute3-1").unwrap().db, "attribute3-1");
        assert!(s.find("attribute3").is_none());
        let again = load_schema(&s.to_json()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn minimal_and_invalid() {
        let s = load_schema(br#"{"db":"E","type":"Model","repetitive":"false","text":"E","nodes":[]}"#).unwrap();
        assert!(s.nodes.is_empty());
        let e = load_schema(br#"{"db":"E","type":"Model","nodes":[{"db":"a","type":"IntegerField"}]}"#).unwrap_err();
        assert!(e.to_string().contains("$.nodes[0].type"), "{e}");
        let e = load_schema(br#"{"db":"E","type":"Model","nodes":[{"db":"a","type":"TextField"},{"db":"a","type":"TextField"}]}"#).unwrap_err();
        assert!(e.to_string().contains("duplicate"), "{e}");
        let e = load_schema(br#"{"db":"E","type":"Model","nodes":[{"db":"a","type":"TextField","nodes":[{"db":"b","type":"TextField"}]}]}"#).unwrap_err();
        assert!(e.to_string().contains("$.nodes[0].nodes"), "{e}");
        assert!(load_schema(br#"{"db":"E","type":"TextField"}"#).is_err());
        assert!(load_schema(b"{").is_err());
    }
}
