//! The XPath subset used by mapping files: absolute child steps with an
//! optional terminal `@attr`, e.g. `/document/attr1/@name`.
//!
//! Absolute paths are resolved against the document element. When the first
//! step names the document element it is consumed there; otherwise the
//! document element acts as an anonymous wrapper and the first step selects
//! its children. That lets `/document` address the `<document>` records of a
//! file whose root is a container such as `<xml>`.

use std::fmt;
use std::str::FromStr;

use roxmltree::{Document, Node};
use thiserror::Error;

use crate::text::collapse_whitespace;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid xpath {path:?}: {reason}")]
pub struct XPathError {
    pub path: String,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct XPath {
    pub steps: Vec<String>,
    pub attr: Option<String>,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && !s.chars().any(|c| c.is_whitespace() || matches!(c, '/' | '@' | '[' | ']' | '(' | ')' | '*' | ':' | '=' | '"' | '\''))
}

impl FromStr for XPath {
    type Err = XPathError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason| XPathError { path: s.to_string(), reason };
        let rest = s.strip_prefix('/').ok_or_else(|| err("must be absolute"))?;
        if rest.is_empty() {
            return Err(err("no steps"));
        }
        let mut steps = Vec::new();
        let mut attr = None;
        let parts: Vec<&str> = rest.split('/').collect();
        for (i, part) in parts.iter().enumerate() {
            if let Some(name) = part.strip_prefix('@') {
                if i + 1 != parts.len() {
                    return Err(err("attribute step must be last"));
                }
                if !valid_name(name) {
                    return Err(err("bad attribute name"));
                }
                attr = Some(name.to_string());
            } else if valid_name(part) {
                steps.push(part.to_string());
            } else {
                return Err(err("only plain child steps are supported"));
            }
        }
        Ok(Self { steps, attr })
    }
}

impl fmt::Display for XPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.steps {
            write!(f, "/{s}")?;
        }
        if let Some(a) = &self.attr {
            write!(f, "/@{a}")?;
        }
        Ok(())
    }
}

impl XPath {
    pub fn parse(s: &str) -> Result<Self, XPathError> {
        s.parse()
    }

    pub fn is_attribute(&self) -> bool {
        self.attr.is_some()
    }

    /// The remainder of `self` below the element path `prefix`, if `self`
    /// extends it.
    pub fn relative_to(&self, prefix: &XPath) -> Option<RelPath> {
        if prefix.attr.is_some() || !self.steps.starts_with(&prefix.steps) {
            return None;
        }
        Some(RelPath {
            steps: self.steps[prefix.steps.len()..].to_vec(),
            attr: self.attr.clone(),
        })
    }

    /// Element nodes selected by the element part of this path.
    pub fn select<'a, 'i>(&self, doc: &'a Document<'i>) -> Vec<Node<'a, 'i>> {
        select_absolute(doc, &self.steps)
    }
}

/// Steps relative to a context element.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RelPath {
    pub steps: Vec<String>,
    pub attr: Option<String>,
}

impl fmt::Display for RelPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.steps.join("/"))?;
        if let Some(a) = &self.attr {
            if !self.steps.is_empty() {
                f.write_str("/")?;
            }
            write!(f, "@{a}")?;
        }
        Ok(())
    }
}

pub fn select_absolute<'a, 'i>(doc: &'a Document<'i>, steps: &[String]) -> Vec<Node<'a, 'i>> {
    let root = doc.root_element();
    if steps.is_empty() {
        return vec![root];
    }
    if root.tag_name().name() == steps[0] {
        select_relative(root, &steps[1..])
    } else {
        select_relative(root, steps)
    }
}

/// Elements reached from `ctx` by following child steps, in document order.
pub fn select_relative<'a, 'i>(ctx: Node<'a, 'i>, steps: &[String]) -> Vec<Node<'a, 'i>> {
    let mut current = vec![ctx];
    for step in steps {
        current = current
            .into_iter()
            .flat_map(|n| n.children().filter(move |c| c.is_element() && c.tag_name().name() == step))
            .collect();
        if current.is_empty() {
            break;
        }
    }
    current
}

/// Whitespace-normalized value of an element (all descendant text) or of one
/// of its attributes. Empty values count as absent.
pub fn node_value(node: Node<'_, '_>, attr: Option<&str>) -> Option<String> {
    let raw = match attr {
        Some(a) => node
            .attributes()
            .find(|x| x.name() == a)
            .map(|x| x.value().to_string())?,
        None => node
            .descendants()
            .filter(|d| d.is_text())
            .filter_map(|d| d.text())
            .collect::<Vec<_>>()
            .join(" "),
    };
    let v = collapse_whitespace(&raw);
    (!v.is_empty()).then_some(v)
}

/// Text directly inside an element, ignoring nested elements.
pub fn direct_text(node: Node<'_, '_>) -> String {
    let raw: Vec<&str> = node.children().filter(|c| c.is_text()).filter_map(|c| c.text()).collect();
    collapse_whitespace(&raw.join(" "))
}

/// Every non-empty (path, value) occurrence in a document: one per element
/// with direct text and one per non-empty attribute, in document order.
pub fn walk_paths(doc: &Document<'_>) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut stack: Vec<String> = Vec::new();
    walk(doc.root_element(), &mut stack, &mut out);
    out
}

fn walk(node: Node<'_, '_>, stack: &mut Vec<String>, out: &mut Vec<(String, String)>) {
    stack.push(node.tag_name().name().to_string());
    let path = format!("/{}", stack.join("/"));
    let text = direct_text(node);
    if !text.is_empty() {
        out.push((path.clone(), text));
    }
    for a in node.attributes() {
        let v = collapse_whitespace(a.value());
        if !v.is_empty() {
            out.push((format!("{path}/@{}", a.name()), v));
        }
    }
    for child in node.children().filter(|c| c.is_element()) {
        walk(child, stack, out);
    }
    stack.pop();
}

/// Bring a user-supplied path into the supported dialect: positional and
/// other predicates are dropped, duplicate and trailing slashes removed.
pub fn normalize(path: &str) -> String {
    let mut out = String::with_capacity(path.len());
    let mut depth = 0usize;
    for c in path.trim().chars() {
        match c {
            '[' => depth += 1,
            ']' => depth = depth.saturating_sub(1),
            _ if depth > 0 => {}
            '/' if out.ends_with('/') => {}
            _ => out.push(c),
        }
    }
    while out.len() > 1 && out.ends_with('/') {
        out.pop();
    }
    if !out.starts_with('/') {
        out.insert(0, '/');
    }
    out
}

/// `path` without its first step (`/xml/document/a` → `/document/a`).
pub fn strip_root(path: &str) -> Option<String> {
    let rest = path.strip_prefix('/')?;
    let (_, tail) = rest.split_once('/')?;
    Some(format!("/{tail}"))
}
