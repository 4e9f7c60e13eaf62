//! Semi-automatic dictionary induction: term statistics over a document
//! sample, frequency-based key proposal and single-link synset grouping.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{Dictionary, DictionaryError, Synset, SynsetId};
use crate::structure::{string_similarity, TextNode};
use crate::text::normalize_key;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TermCount {
    pub occurrences: u64,
    pub doc_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermStats {
    pub sample_size: u64,
    pub terms: BTreeMap<String, TermCount>,
}

/// Count normalized text-node strings over a sample of documents.
pub fn term_frequencies(sample: &[Vec<TextNode>]) -> Result<TermStats, DictionaryError> {
    if sample.is_empty() {
        return Err(DictionaryError::EmptyInput("term sample"));
    }
    let mut terms: BTreeMap<String, TermCount> = BTreeMap::new();
    for doc in sample {
        let mut seen = HashSet::new();
        for node in doc {
            let term = normalize_key(&node.text);
            if term.is_empty() {
                continue;
            }
            let entry = terms.entry(term.clone()).or_default();
            entry.occurrences += 1;
            if seen.insert(term) {
                entry.doc_count += 1;
            }
        }
    }
    Ok(TermStats {
        sample_size: sample.len() as u64,
        terms,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub term: String,
    pub doc_count: u64,
    pub occurrences: u64,
}

impl Candidate {
    pub fn new(term: impl Into<String>, doc_count: u64) -> Self {
        Self {
            term: term.into(),
            doc_count,
            occurrences: doc_count,
        }
    }
}

/// Terms present in at least `min_doc_ratio` of the sampled documents,
/// sorted by document count (descending) and then term.
pub fn propose_keys(stats: &TermStats, min_doc_ratio: f64) -> Vec<Candidate> {
    let size = stats.sample_size.max(1) as f64;
    let mut out: Vec<Candidate> = stats
        .terms
        .iter()
        .filter(|(_, c)| c.doc_count as f64 / size >= min_doc_ratio)
        .map(|(term, c)| Candidate {
            term: term.clone(),
            doc_count: c.doc_count,
            occurrences: c.occurrences,
        })
        .collect();
    out.sort_by(|a, b| b.doc_count.cmp(&a.doc_count).then_with(|| a.term.cmp(&b.term)));
    out
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.0[root] != root {
            root = self.0[root];
        }
        let mut cur = x;
        while self.0[cur] != root {
            let next = self.0[cur];
            self.0[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index wins so the structure does not depend on call order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Single-link grouping: two terms share a synset when a chain of pairs
/// with `string_similarity >= threshold` connects them.
pub fn group_synsets(
    candidates: &[Candidate],
    threshold: f64,
    language: &str,
) -> Result<Dictionary, DictionaryError> {
    if candidates.is_empty() {
        return Err(DictionaryError::EmptyInput("candidate keys"));
    }
    // dedup by term, keeping the strongest counts, then fix an order
    let mut by_term: BTreeMap<&str, &Candidate> = BTreeMap::new();
    for c in candidates {
        by_term
            .entry(c.term.as_str())
            .and_modify(|cur| {
                if (c.doc_count, c.occurrences) > (cur.doc_count, cur.occurrences) {
                    *cur = c;
                }
            })
            .or_insert(c);
    }
    let terms: Vec<&Candidate> = by_term.into_values().collect();
    let chars: Vec<Vec<char>> = terms.iter().map(|c| c.term.chars().collect()).collect();

    let mut uf = UnionFind((0..terms.len()).collect());
    for i in 0..terms.len() {
        for j in i + 1..terms.len() {
            let (a, b) = (chars[i].len(), chars[j].len());
            let bound = if a.max(b) == 0 { 1.0 } else { a.min(b) as f64 / a.max(b) as f64 };
            if bound < threshold {
                continue;
            }
            if string_similarity(&terms[i].term, &terms[j].term) >= threshold {
                uf.union(i, j);
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<&Candidate>> = BTreeMap::new();
    for (i, c) in terms.iter().enumerate() {
        let root = uf.find(i);
        groups.entry(root).or_default().push(c);
    }

    let mut synsets: Vec<(String, Vec<String>)> = groups
        .into_values()
        .map(|members| {
            let canonical = members
                .iter()
                .min_by(|a, b| {
                    b.doc_count
                        .cmp(&a.doc_count)
                        .then(a.term.chars().count().cmp(&b.term.chars().count()))
                        .then_with(|| a.term.cmp(&b.term))
                })
                .expect("group is non-empty")
                .term
                .clone();
            let mut variants: Vec<String> = members
                .iter()
                .map(|c| c.term.clone())
                .filter(|t| *t != canonical)
                .collect();
            variants.sort();
            variants.insert(0, canonical.clone());
            (canonical, variants)
        })
        .collect();
    synsets.sort_by(|a, b| a.0.cmp(&b.0));

    let synsets = synsets
        .into_iter()
        .enumerate()
        .map(|(i, (canonical, variants))| Synset {
            id: SynsetId(format!("K{}", i + 1)),
            canonical,
            variants,
            parent: None,
        })
        .collect();
    Dictionary::new(language, synsets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::HtmlPath;

    fn doc(texts: &[&str]) -> Vec<TextNode> {
        texts
            .iter()
            .map(|t| TextNode {
                path: HtmlPath::from_tags(&["p"]),
                text: t.to_string(),
            })
            .collect()
    }

    #[test]
    fn counts_across_docs() {
        let stats = term_frequencies(&[doc(&["Price", "1"]), doc(&["Price", "2"])]).unwrap();
        assert_eq!(stats.terms["Price"], TermCount { occurrences: 2, doc_count: 2 });
    }

    #[test]
    fn counts_match_brute_force() {
        let sample = vec![doc(&["a", "Price", "Price"]), doc(&["b"]), doc(&["c", "Price: "])];
        let stats = term_frequencies(&sample).unwrap();
        // brute force: scan each doc independently
        let occ = sample.iter().flatten().filter(|n| n.text.trim_end_matches([':', ' ']) == "Price").count();
        let docs = sample
            .iter()
            .filter(|d| d.iter().any(|n| n.text.trim_end_matches([':', ' ']) == "Price"))
            .count();
        assert_eq!(stats.terms["Price"], TermCount { occurrences: occ as u64, doc_count: docs as u64 });
        assert_eq!((occ, docs), (3, 2));
    }

    #[test]
    fn single_doc_repeat() {
        let stats = term_frequencies(&[doc(&["x"]), doc(&["Lot", "Lot"]), doc(&["y"])]).unwrap();
        assert_eq!(stats.terms["Lot"], TermCount { occurrences: 2, doc_count: 1 });
    }

    #[test]
    fn whitespace_variants_are_one_term() {
        let stats = term_frequencies(&[doc(&["Price "]), doc(&["  Price"])]).unwrap();
        assert_eq!(stats.terms.len(), 1);
        assert_eq!(stats.terms["Price"].doc_count, 2);
    }

    #[test]
    fn empty_sample_rejected() {
        assert!(term_frequencies(&[]).is_err());
    }

    #[test]
    fn propose_filters_by_ratio() {
        let mut sample: Vec<Vec<TextNode>> = (0..9).map(|i| doc(&["Buyer", &format!("v{i}")])).collect();
        sample.push(doc(&["other"]));
        let stats = term_frequencies(&sample).unwrap();
        let keys = propose_keys(&stats, 0.8);
        assert_eq!(keys.len(), 1);
        assert_eq!(keys[0].term, "Buyer");
        assert_eq!(propose_keys(&stats, 0.0).len(), stats.terms.len());
        let all = propose_keys(&stats, 0.0);
        assert_eq!(all[0].term, "Buyer");
        assert_eq!(all[1].term, "other");
    }

    #[test]
    fn grouping_examples() {
        let d = group_synsets(&[Candidate::new("Name", 5), Candidate::new("Names", 5)], 0.8, "en").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.synsets[0].canonical, "Name");
        let d = group_synsets(&[Candidate::new("Name", 5), Candidate::new("Price", 5)], 0.8, "en").unwrap();
        assert_eq!(d.len(), 2);
        let d = group_synsets(&[Candidate::new("Only", 1)], 0.8, "en").unwrap();
        assert_eq!(d.synsets[0].id.as_str(), "K1");
        assert_eq!(d.synsets[0].variants, ["Only"]);
    }

    #[test]
    fn canonical_prefers_frequency() {
        let d = group_synsets(&[Candidate::new("Name", 2), Candidate::new("Names", 7)], 0.8, "en").unwrap();
        assert_eq!(d.synsets[0].canonical, "Names");
        assert_eq!(d.synsets[0].variants, ["Names", "Name"]);
    }
}
