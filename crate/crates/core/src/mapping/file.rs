use chrono::{NaiveDate, Utc};
use indexmap::IndexMap;
use serde_json::{Map, Value};

use super::MappingError;

pub const XPATH_KEY: &str = "__xpath__";
pub const CONVERSION_KEY: &str = "__conversion__";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MappingNode {
    pub xpaths: Vec<String>,
    pub conversion: IndexMap<String, String>,
    pub children: IndexMap<String, MappingNode>,
}

impl MappingNode {
    fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert(XPATH_KEY.into(), Value::from(self.xpaths.clone()));
        if !self.conversion.is_empty() {
            let conv: Map<String, Value> =
                self.conversion.iter().map(|(k, v)| (k.clone(), Value::from(v.clone()))).collect();
            m.insert(CONVERSION_KEY.into(), Value::Object(conv));
        }
        for (name, child) in &self.children {
            m.insert(name.clone(), child.to_value());
        }
        Value::Object(m)
    }

    fn from_value(v: &Value, at: &str) -> Result<Self, MappingError> {
        let bad = |msg: String| MappingError::Format(format!("{at}: {msg}"));
        let obj = v.as_object().ok_or_else(|| bad("expected an object".into()))?;
        let mut node = MappingNode::default();
        for (key, val) in obj {
            match key.as_str() {
                XPATH_KEY => {
                    let arr = val.as_array().ok_or_else(|| bad(format!("{XPATH_KEY} must be an array")))?;
                    for x in arr {
                        let s = x.as_str().ok_or_else(|| bad(format!("{XPATH_KEY} entries must be strings")))?;
                        node.xpaths.push(s.to_string());
                    }
                }
                CONVERSION_KEY => {
                    let conv = val.as_object().ok_or_else(|| bad(format!("{CONVERSION_KEY} must be an object")))?;
                    for (from, to) in conv {
                        let to = match to {
                            Value::String(s) => s.clone(),
                            Value::Bool(_) | Value::Number(_) => to.to_string(),
                            Value::Null => "".into(),
                            _ => return Err(bad(format!("conversion target for {from:?} must be a scalar"))),
                        };
                        node.conversion.insert(from.clone(), to);
                    }
                }
                name => {
                    let child = MappingNode::from_value(val, &format!("{at}.{name}"))?;
                    node.children.insert(name.to_string(), child);
                }
            }
        }
        Ok(node)
    }

    pub fn child_mut_or_default(&mut self, name: &str) -> &mut MappingNode {
        self.children.entry(name.to_string()).or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingFile {
    pub version: String,
    pub roots: IndexMap<String, MappingNode>,
}

impl MappingFile {
    pub fn new(version: impl Into<String>) -> Self {
        Self {
            version: version.into(),
            roots: IndexMap::new(),
        }
    }

    /// Parse the JSON form without checking it against a schema.
    pub fn parse(bytes: &[u8]) -> Result<Self, MappingError> {
        let v: Value = serde_json::from_slice(bytes).map_err(|e| MappingError::Format(e.to_string()))?;
        let obj = v.as_object().ok_or_else(|| MappingError::Format("mapping must be a JSON object".into()))?;
        let version = obj
            .get("version")
            .and_then(Value::as_str)
            .ok_or_else(|| MappingError::Format("missing version string".into()))?
            .to_string();
        parse_version(&version)?;
        let mut roots = IndexMap::new();
        for (name, val) in obj.iter().filter(|(k, _)| *k != "version") {
            roots.insert(name.clone(), MappingNode::from_value(val, name)?);
        }
        Ok(Self { version, roots })
    }

    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("version".into(), Value::from(self.version.clone()));
        for (name, node) in &self.roots {
            m.insert(name.clone(), node.to_value());
        }
        Value::Object(m)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(&self.to_value()).expect("mapping serializes");
        out.push(b'\n');
        out
    }

    /// Node at a dotted path (`document.childEntity.attribute1`).
    pub fn node(&self, path: &str) -> Option<&MappingNode> {
        let mut parts = path.split('.');
        let root = self.roots.get(parts.next()?)?;
        parts.try_fold(root, |n, p| n.children.get(p))
    }

    /// Every xpath bound anywhere in the file.
    pub fn all_xpaths(&self) -> Vec<String> {
        fn go(n: &MappingNode, out: &mut Vec<String>) {
            out.extend(n.xpaths.iter().cloned());
            for c in n.children.values() {
                go(c, out);
            }
        }
        let mut out = Vec::new();
        for r in self.roots.values() {
            go(r, &mut out);
        }
        out
    }
}

/// Split `YYYY.MM.DD.NN` into its date and daily counter.
pub fn parse_version(v: &str) -> Result<(NaiveDate, u32), MappingError> {
    let bad = || MappingError::Version(v.to_string());
    let parts: Vec<&str> = v.split('.').collect();
    if parts.len() != 4 || [4, 2, 2, 2].iter().zip(&parts).any(|(n, p)| p.len() != *n || !p.bytes().all(|b| b.is_ascii_digit())) {
        return Err(bad());
    }
    let date = NaiveDate::parse_from_str(&parts[..3].join("."), "%Y.%m.%d").map_err(|_| bad())?;
    let counter = parts[3].parse().map_err(|_| bad())?;
    Ok((date, counter))
}

/// Version following `previous` when stamped on `today`: the counter
/// increments within a day and restarts at 01 on a new day.
pub fn next_version(previous: Option<&str>, today: NaiveDate) -> String {
    let counter = match previous.and_then(|p| parse_version(p).ok()) {
        Some((date, n)) if date == today => n + 1,
        _ => 1,
    };
    format!("{}.{:02}", today.format("%Y.%m.%d"), counter.min(99))
}

pub fn today() -> NaiveDate {
    Utc::now().date_naive()
}
