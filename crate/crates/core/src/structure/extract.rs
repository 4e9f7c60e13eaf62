//! Key detection and the single-pass (key, value) linking algorithm, with
//! data-rescue hooks applied before the pass.

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::path::{HtmlPath, PathStep, PathStrategy, TextNode};
use super::similarity::{normalized_edit_similarity, prefix_similarity, string_similarity};
use super::StructureError;
use crate::dictionary::{Dictionary, SynsetId};
use crate::text::normalize_key;

/// Similarity used to decide whether a text node belongs to the last key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum LinkSimilarity {
    EditDistance,
    #[default]
    LongestPrefix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ExtractionConfig {
    pub strategy: PathStrategy,
    pub key_threshold: f64,
    pub link_threshold: f64,
    pub link_similarity: LinkSimilarity,
    pub rescue: RescueRules,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            strategy: PathStrategy::UniqueTag,
            key_threshold: 0.8,
            link_threshold: 0.6,
            link_similarity: LinkSimilarity::LongestPrefix,
            rescue: RescueRules::default(),
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<(), StructureError> {
        for (name, v) in [("keyThreshold", self.key_threshold), ("linkThreshold", self.link_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(StructureError::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Glob over element-path steps, written with `\` or `/` separators.
///
/// A step token matches when it equals the step's tag, `tag<ordinal>`,
/// `tag.<attr>` or `tag<ordinal>.<attr>`; `*` matches one step and `**`
/// any run of steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PathPattern {
    source: String,
    tokens: Vec<String>,
}

impl TryFrom<String> for PathPattern {
    type Error = StructureError;

    fn try_from(source: String) -> Result<Self, Self::Error> {
        let tokens: Vec<String> = source
            .split(['\\', '/'])
            .filter(|t| !t.is_empty())
            .map(|t| t.trim().to_ascii_lowercase())
            .collect();
        if tokens.is_empty() || tokens.iter().any(|t| t.is_empty() || t.contains(char::is_whitespace)) {
            return Err(StructureError::Config(format!("invalid path pattern {source:?}")));
        }
        Ok(Self { source, tokens })
    }
}

impl From<PathPattern> for String {
    fn from(p: PathPattern) -> Self {
        p.source
    }
}

impl PathPattern {
    pub fn parse(source: &str) -> Result<Self, StructureError> {
        Self::try_from(source.to_string())
    }

    fn token_matches(token: &str, step: &PathStep) -> bool {
        if token == "*" || token == step.tag {
            return true;
        }
        let numbered = format!("{}{}", step.tag, step.ordinal);
        token == numbered
            || (!step.attr_hint.is_empty()
                && (token == format!("{numbered}.{}", step.attr_hint.to_ascii_lowercase())
                    || token == format!("{}.{}", step.tag, step.attr_hint.to_ascii_lowercase())))
    }

    /// Whether the whole of `steps` matches the pattern.
    pub fn matches(&self, steps: &[PathStep]) -> bool {
        let (n, m) = (self.tokens.len(), steps.len());
        // reach[i][j]: first i tokens match first j steps
        let mut reach = vec![vec![false; m + 1]; n + 1];
        reach[0][0] = true;
        for i in 1..=n {
            let tok = &self.tokens[i - 1];
            for j in 0..=m {
                reach[i][j] = if tok == "**" {
                    reach[i - 1][j] || (j > 0 && reach[i][j - 1])
                } else {
                    j > 0 && reach[i - 1][j - 1] && Self::token_matches(tok, &steps[j - 1])
                };
            }
        }
        reach[n][m]
    }

    /// Length of the shortest prefix of `steps` matched by the pattern.
    pub fn matched_prefix(&self, steps: &[PathStep]) -> Option<usize> {
        (1..=steps.len()).find(|&k| self.matches(&steps[..k]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KeylessRule {
    pub synset: SynsetId,
    pub pattern: PathPattern,
}

/// Collapse an element's descendant text into one node, optionally keeping
/// only what `extract` captures (group 1, or the whole match).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ElementRewrite {
    pub pattern: PathPattern,
    #[serde(default, with = "opt_regex")]
    pub extract: Option<Regex>,
}

impl PartialEq for ElementRewrite {
    fn eq(&self, other: &Self) -> bool {
        self.pattern == other.pattern
            && self.extract.as_ref().map(Regex::as_str) == other.extract.as_ref().map(Regex::as_str)
    }
}

mod opt_regex {
    use regex::Regex;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(re: &Option<Regex>, s: S) -> Result<S::Ok, S::Error> {
        match re {
            Some(r) => s.serialize_some(r.as_str()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Regex>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|s| Regex::new(&s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct RescueRules {
    pub root_selector: Option<PathPattern>,
    pub keyless_rules: Vec<KeylessRule>,
    pub element_rewrites: Vec<ElementRewrite>,
}

impl RescueRules {
    fn apply_root(&self, nodes: &[TextNode]) -> Vec<(TextNode, bool)> {
        nodes
            .iter()
            .map(|n| {
                let inside = match &self.root_selector {
                    Some(p) => p.matched_prefix(&n.path.steps).is_some(),
                    None => true,
                };
                (n.clone(), inside)
            })
            .collect()
    }

    fn apply_rewrites(&self, nodes: Vec<(TextNode, bool)>) -> Vec<(TextNode, bool)> {
        if self.element_rewrites.is_empty() {
            return nodes;
        }
        let mut out: Vec<(TextNode, bool)> = Vec::with_capacity(nodes.len());
        // (index in out, rule index, prefix steps) of the group being built
        let mut open: Option<(usize, usize, Vec<PathStep>)> = None;
        for (node, inside) in nodes {
            let hit = self.element_rewrites.iter().enumerate().find_map(|(ri, r)| {
                r.pattern.matched_prefix(&node.path.steps).map(|k| (ri, node.path.steps[..k].to_vec()))
            });
            match (hit, &mut open) {
                (Some((ri, prefix)), Some((idx, open_ri, open_prefix))) if ri == *open_ri && prefix == *open_prefix => {
                    let merged = &mut out[*idx].0.text;
                    merged.push(' ');
                    merged.push_str(&node.text);
                }
                (Some((ri, prefix)), _) => {
                    out.push((
                        TextNode {
                            path: HtmlPath::new(prefix.clone(), node.path.strategy),
                            text: node.text,
                        },
                        inside,
                    ));
                    open = Some((out.len() - 1, ri, prefix));
                }
                (None, _) => {
                    open = None;
                    out.push((node, inside));
                }
            }
        }
        // second pass: regex extraction over the merged text
        for (node, _) in &mut out {
            let Some(rule) = self.element_rewrites.iter().find(|r| r.pattern.matched_prefix(&node.path.steps) == Some(node.path.len())) else {
                continue;
            };
            if let Some(re) = &rule.extract {
                let parts: Vec<String> = re
                    .captures_iter(&node.text)
                    .map(|c| c.get(1).or_else(|| c.get(0)).map(|m| m.as_str().trim().to_string()).unwrap_or_default())
                    .filter(|s| !s.is_empty())
                    .collect();
                if !parts.is_empty() {
                    node.text = parts.join(" ");
                }
            }
        }
        out
    }
}

/// Role a text node played during extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", content = "synset", rename_all = "camelCase")]
pub enum NodeRole {
    Key(SynsetId),
    Value(SynsetId),
    Keyless(SynsetId),
    Orphan,
    OutsideRoot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedNode {
    pub path: HtmlPath,
    pub text: String,
    pub role: NodeRole,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KeyValuePair {
    pub synset_id: SynsetId,
    pub key_text: String,
    pub value: String,
    pub key_path: HtmlPath,
    pub value_path: HtmlPath,
}

/// Pairs plus the role of every (post-rescue) text node.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Extraction {
    pub pairs: Vec<KeyValuePair>,
    pub nodes: Vec<ExtractedNode>,
}

/// Dictionary variants pre-normalized for repeated fuzzy lookups.
#[derive(Debug, Clone)]
pub struct KeyMatcher {
    entries: Vec<(Vec<char>, SynsetId)>,
}

impl KeyMatcher {
    pub fn new(dict: &Dictionary) -> Self {
        let mut synsets: Vec<_> = dict.synsets.iter().collect();
        synsets.sort_by(|a, b| a.id.cmp(&b.id));
        let entries = synsets
            .into_iter()
            .flat_map(|s| {
                s.variants
                    .iter()
                    .map(|v| normalize_key(v))
                    .filter(|v| !v.is_empty())
                    .map(move |v| (v.chars().collect(), s.id.clone()))
            })
            .collect();
        Self { entries }
    }

    /// Best synset for `text` with similarity at least `threshold`; ties go
    /// to the lowest synset id.
    pub fn best(&self, text: &str, threshold: f64) -> Option<(SynsetId, f64)> {
        let norm: Vec<char> = normalize_key(text).chars().collect();
        if norm.is_empty() {
            return None;
        }
        let mut best: Option<(&SynsetId, f64)> = None;
        for (variant, id) in &self.entries {
            let (a, b) = (norm.len(), variant.len());
            let bound = a.min(b) as f64 / a.max(b) as f64;
            if bound < threshold || best.is_some_and(|(_, s)| bound <= s) {
                continue;
            }
            let sim = normalized_edit_similarity(&norm, variant);
            if sim >= threshold && best.is_none_or(|(_, s)| sim > s) {
                best = Some((id, sim));
            }
        }
        best.map(|(id, s)| (id.clone(), s))
    }
}

/// Fuzzy key lookup of a single text against a dictionary.
pub fn match_key(text: &str, dict: &Dictionary, key_threshold: f64) -> Option<SynsetId> {
    KeyMatcher::new(dict).best(text, key_threshold).map(|(id, _)| id)
}

/// Convenience wrapper returning only the pairs.
pub fn extract_pairs(nodes: &[TextNode], dict: &Dictionary, config: &ExtractionConfig) -> Vec<KeyValuePair> {
    extract(nodes, dict, config).pairs
}

/// Run the key/value linking pass over text nodes in document order.
pub fn extract(nodes: &[TextNode], dict: &Dictionary, config: &ExtractionConfig) -> Extraction {
    let matcher = KeyMatcher::new(dict);
    extract_with(nodes, &matcher, config)
}

pub fn extract_with(nodes: &[TextNode], matcher: &KeyMatcher, config: &ExtractionConfig) -> Extraction {
    let rescue = &config.rescue;
    let prepared = rescue.apply_rewrites(rescue.apply_root(nodes));

    struct Pending {
        order: usize,
        pair: KeyValuePair,
    }

    let mut pairs: Vec<(usize, KeyValuePair)> = Vec::new();
    let mut out_nodes = Vec::with_capacity(prepared.len());
    let mut previous_key: Option<(SynsetId, String, HtmlPath, Vec<String>)> = None;
    let mut pending: Option<Pending> = None;

    for (idx, (node, inside)) in prepared.into_iter().enumerate() {
        if !inside {
            out_nodes.push(ExtractedNode { path: node.path, text: node.text, role: NodeRole::OutsideRoot });
            continue;
        }
        if let Some(rule) = rescue.keyless_rules.iter().find(|r| r.pattern.matches(&node.path.steps)) {
            pairs.push((
                idx,
                KeyValuePair {
                    synset_id: rule.synset.clone(),
                    key_text: String::new(),
                    value: node.text.clone(),
                    key_path: node.path.clone(),
                    value_path: node.path.clone(),
                },
            ));
            out_nodes.push(ExtractedNode { path: node.path, text: node.text, role: NodeRole::Keyless(rule.synset.clone()) });
            continue;
        }
        if let Some((id, _)) = matcher.best(&node.text, config.key_threshold) {
            if let Some(p) = pending.take() {
                pairs.push((p.order, p.pair));
            }
            let tokens = node.path.tokens();
            previous_key = Some((id.clone(), node.text.clone(), node.path.clone(), tokens));
            out_nodes.push(ExtractedNode { path: node.path, text: node.text, role: NodeRole::Key(id) });
            continue;
        }
        let linked = previous_key.as_ref().filter(|(_, _, _, key_tokens)| {
            let tokens = node.path.tokens();
            let sim = match config.link_similarity {
                LinkSimilarity::EditDistance => normalized_edit_similarity(&tokens, key_tokens),
                LinkSimilarity::LongestPrefix => prefix_similarity(&tokens, key_tokens),
            };
            sim > config.link_threshold
        });
        match linked {
            Some((id, key_text, key_path, _)) => {
                match &mut pending {
                    Some(p) => {
                        p.pair.value.push(' ');
                        p.pair.value.push_str(&node.text);
                    }
                    None => {
                        pending = Some(Pending {
                            order: idx,
                            pair: KeyValuePair {
                                synset_id: id.clone(),
                                key_text: key_text.clone(),
                                value: node.text.clone(),
                                key_path: key_path.clone(),
                                value_path: node.path.clone(),
                            },
                        })
                    }
                }
                out_nodes.push(ExtractedNode { path: node.path, text: node.text, role: NodeRole::Value(id.clone()) });
            }
            None => out_nodes.push(ExtractedNode { path: node.path, text: node.text, role: NodeRole::Orphan }),
        }
    }
    if let Some(p) = pending.take() {
        pairs.push((p.order, p.pair));
    }
    pairs.sort_by_key(|(order, _)| *order);
    Extraction {
        pairs: pairs.into_iter().map(|(_, p)| p).collect(),
        nodes: out_nodes,
    }
}

/// Exposed for callers that hold plain strings rather than a dictionary.
pub fn key_similarity(a: &str, b: &str) -> f64 {
    string_similarity(&normalize_key(a), &normalize_key(b))
}
