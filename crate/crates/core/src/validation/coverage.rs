use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::XPathStats;
use crate::mapping::{MappingFile, MappingNode};
use crate::xpath::{normalize, strip_root};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CoverageReport {
    pub mapped: BTreeSet<String>,
    pub unmapped: BTreeSet<String>,
    /// `|mapped| / (|mapped| + |unmapped|)`; 1.0 for an empty corpus.
    pub ratio: f64,
    /// Attribute xpaths of the mapping that match no corpus path.
    pub dead_bindings: Vec<String>,
}

/// First step of an absolute path (`/a/b` gives `a`).
fn first_step(path: &str) -> Option<&str> {
    path.strip_prefix('/')?.split('/').next()
}

/// Whether the bound xpath `m` selects corpus path `p`. A bound path matches
/// the corpus path itself or, when its first step is not the document root,
/// the corpus path with the root stripped: the same wrapper-root rule the
/// engine applies when selecting.
fn selects(bound: &HashSet<String>, p: &str) -> Option<String> {
    if bound.contains(p) {
        return Some(p.to_string());
    }
    let stripped = strip_root(p)?;
    (bound.contains(&stripped) && first_step(&stripped) != first_step(p)).then_some(stripped)
}

fn leaf_xpaths(node: &MappingNode, out: &mut Vec<String>) {
    if node.children.is_empty() {
        out.extend(node.xpaths.iter().map(|x| normalize(x)));
    }
    for c in node.children.values() {
        leaf_xpaths(c, out);
    }
}

/// Split the corpus paths into those bound by some `__xpath__` of `mapping`
/// and the rest. Bound paths are compared as exact strings after
/// normalization; prefix relationships do not count as mapped.
pub fn coverage(stats: &XPathStats, mapping: &MappingFile) -> CoverageReport {
    let bound: HashSet<String> = mapping.all_xpaths().iter().map(|x| normalize(x)).collect();
    let mut mapped = BTreeSet::new();
    let mut unmapped = BTreeSet::new();
    let mut used = HashSet::new();
    for p in stats.paths.keys() {
        match selects(&bound, &normalize(p)) {
            Some(m) => {
                mapped.insert(p.clone());
                used.insert(m);
            }
            None => {
                unmapped.insert(p.clone());
            }
        }
    }
    let mut leaves = Vec::new();
    for r in mapping.roots.values() {
        leaf_xpaths(r, &mut leaves);
    }
    let mut seen = HashSet::new();
    let dead_bindings = leaves
        .into_iter()
        .filter(|x| !used.contains(x) && seen.insert(x.clone()))
        .collect();
    let total = mapped.len() + unmapped.len();
    let ratio = if total == 0 { 1.0 } else { mapped.len() as f64 / total as f64 };
    CoverageReport { mapped, unmapped, ratio, dead_bindings }
}

/// The `k` unmapped paths with the highest corpus frequency, ties broken by
/// path.
pub fn sample_unmapped(report: &CoverageReport, stats: &XPathStats, k: usize) -> Vec<(String, u64)> {
    let mut v: Vec<(String, u64)> = report
        .unmapped
        .iter()
        .map(|p| (p.clone(), stats.paths.get(p).map_or(0, |s| s.count)))
        .collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(k);
    v
}
