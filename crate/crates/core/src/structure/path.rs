//! HTML element paths and the three rendering strategies.

use std::collections::HashMap;
use std::fmt;

use scraper::{Html, Node};
use serde::{Deserialize, Serialize};

use super::StructureError;
use crate::text::collapse_whitespace;

/// How an element's ancestry is rendered into path tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum PathStrategy {
    /// `html\body\div\p`
    TagOnly,
    /// `html1\body1\div3\p2`: every element numbered per tag in document order.
    #[default]
    UniqueTag,
    /// `html1\body1\div3.main\p2`: unique tag plus first non-empty id/class/name.
    UniqueTagWithAttr,
}

impl PathStrategy {
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "tagonly" | "tag" => Some(Self::TagOnly),
            "unique" | "uniquetag" => Some(Self::UniqueTag),
            "attr" | "uniquetagwithattr" => Some(Self::UniqueTagWithAttr),
            _ => None,
        }
    }
}

/// One element on the way from the root to a text node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathStep {
    pub tag: String,
    pub ordinal: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub attr_hint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HtmlPath {
    pub steps: Vec<PathStep>,
    pub strategy: PathStrategy,
}

impl HtmlPath {
    pub fn new(steps: Vec<PathStep>, strategy: PathStrategy) -> Self {
        Self { steps, strategy }
    }

    /// Build a tag-only path from plain tag names; handy for fixtures.
    pub fn from_tags<S: AsRef<str>>(tags: &[S]) -> Self {
        let steps = tags
            .iter()
            .map(|t| PathStep {
                tag: t.as_ref().to_string(),
                ordinal: 0,
                attr_hint: String::new(),
            })
            .collect();
        Self::new(steps, PathStrategy::TagOnly)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Step tokens as rendered under this path's strategy.
    pub fn tokens(&self) -> Vec<String> {
        self.steps.iter().map(|s| render_step(s, self.strategy)).collect()
    }

    /// The path truncated to its first `len` steps.
    pub fn prefix(&self, len: usize) -> HtmlPath {
        HtmlPath::new(self.steps[..len.min(self.steps.len())].to_vec(), self.strategy)
    }
}

fn render_step(step: &PathStep, strategy: PathStrategy) -> String {
    match strategy {
        PathStrategy::TagOnly => step.tag.clone(),
        PathStrategy::UniqueTag => format!("{}{}", step.tag, step.ordinal),
        PathStrategy::UniqueTagWithAttr if step.attr_hint.is_empty() => {
            format!("{}{}", step.tag, step.ordinal)
        }
        PathStrategy::UniqueTagWithAttr => format!("{}{}.{}", step.tag, step.ordinal, step.attr_hint),
    }
}

impl fmt::Display for HtmlPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens().join("\\"))
    }
}

/// A text node together with the path of its enclosing element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextNode {
    pub path: HtmlPath,
    pub text: String,
}

/// Elements whose text never reaches the rendered page.
const INVISIBLE: &[&str] = &["script", "style", "noscript", "template", "head"];

/// Decode `bytes` with the resolved charset.
///
/// Resolution order: `declared` (usually taken from the archived
/// Content-Type), then a `<meta charset>` / `http-equiv` declaration in the
/// first kilobytes, then UTF-8. Malformed input is an error naming the charset.
pub fn decode_html(bytes: &[u8], declared: Option<&str>) -> Result<String, StructureError> {
    let label = declared
        .map(str::to_string)
        .or_else(|| sniff_meta_charset(bytes))
        .unwrap_or_else(|| "utf-8".to_string());
    let encoding = encoding_rs::Encoding::for_label(label.trim().as_bytes())
        .ok_or_else(|| StructureError::Encoding { charset: label.clone() })?;
    let bytes = strip_bom(bytes);
    encoding
        .decode_without_bom_handling_and_without_replacement(bytes)
        .map(|s| s.into_owned())
        .ok_or(StructureError::Encoding { charset: label })
}

fn strip_bom(bytes: &[u8]) -> &[u8] {
    bytes.strip_prefix(&[0xEF, 0xBB, 0xBF][..]).unwrap_or(bytes)
}

/// Find `charset=...` inside the first 4 KiB of an HTML document.
pub fn sniff_meta_charset(bytes: &[u8]) -> Option<String> {
    let head = &bytes[..bytes.len().min(4096)];
    let head = String::from_utf8_lossy(head).to_ascii_lowercase();
    let idx = head.find("charset=")?;
    let rest = head[idx + "charset=".len()..].trim_start_matches(['"', '\'', ' ']);
    let label: String = rest
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | ':' | '.'))
        .collect();
    (!label.is_empty()).then_some(label)
}

/// Parse HTML leniently and list every visible, non-whitespace text node in
/// document order with its element path.
pub fn build_paths(html: &[u8], strategy: PathStrategy) -> Result<Vec<TextNode>, StructureError> {
    build_paths_with_charset(html, None, strategy)
}

pub fn build_paths_with_charset(
    html: &[u8],
    charset: Option<&str>,
    strategy: PathStrategy,
) -> Result<Vec<TextNode>, StructureError> {
    let text = decode_html(html, charset)?;
    Ok(build_paths_from_str(&text, strategy))
}

pub fn build_paths_from_str(html: &str, strategy: PathStrategy) -> Vec<TextNode> {
    let doc = Html::parse_document(html);
    let mut walker = Walker {
        strategy,
        counters: HashMap::new(),
        stack: Vec::new(),
        out: Vec::new(),
    };
    walker.walk(doc.tree.root());
    walker.out
}

struct Walker {
    strategy: PathStrategy,
    counters: HashMap<String, u32>,
    stack: Vec<PathStep>,
    out: Vec<TextNode>,
}

impl Walker {
    fn walk(&mut self, node: ego_tree::NodeRef<'_, Node>) {
        match node.value() {
            Node::Element(el) => {
                let tag = el.name().to_ascii_lowercase();
                let counter = self.counters.entry(tag.clone()).or_insert(0);
                *counter += 1;
                let ordinal = match self.strategy {
                    PathStrategy::TagOnly => 0,
                    _ => *counter,
                };
                // recorded under every strategy so rescue patterns can use it;
                // only the attr strategy renders it
                let attr_hint = ["id", "class", "name"]
                    .iter()
                    .filter_map(|a| el.attr(a))
                    .map(|v| v.split_whitespace().collect::<Vec<_>>().join("_"))
                    .find(|v| !v.is_empty())
                    .unwrap_or_default();
                let invisible = INVISIBLE.contains(&tag.as_str());
                self.stack.push(PathStep { tag, ordinal, attr_hint });
                if !invisible {
                    for child in node.children() {
                        self.walk(child);
                    }
                } else {
                    // keep ordinals stable even though the subtree is skipped
                    for d in node.descendants().skip(1) {
                        if let Node::Element(inner) = d.value() {
                            *self.counters.entry(inner.name().to_ascii_lowercase()).or_insert(0) += 1;
                        }
                    }
                }
                self.stack.pop();
            }
            Node::Text(t) => {
                let text = collapse_whitespace(t);
                if !text.is_empty() && !self.stack.is_empty() {
                    self.out.push(TextNode {
                        path: HtmlPath::new(self.stack.clone(), self.strategy),
                        text,
                    });
                }
            }
            _ => {
                for child in node.children() {
                    self.walk(child);
                }
            }
        }
    }
}
