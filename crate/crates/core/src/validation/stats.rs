use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize};

use super::ValidationError;
use crate::xpath::walk_paths;

/// Example file names kept per path unless the caller asks otherwise.
pub const DEFAULT_EXAMPLES: usize = 2;

/// Occurrences of one path across a corpus and the first few files (by name)
/// containing it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(u64, Vec<String>)", into = "(u64, Vec<String>)")]
pub struct PathStat {
    pub count: u64,
    pub examples: Vec<String>,
}

impl From<(u64, Vec<String>)> for PathStat {
    fn from((count, examples): (u64, Vec<String>)) -> Self {
        Self { count, examples }
    }
}

impl From<PathStat> for (u64, Vec<String>) {
    fn from(s: PathStat) -> Self {
        (s.count, s.examples)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub file: String,
    pub error: String,
}

/// Non-empty XPaths of a corpus. The JSON form is an object
/// `path -> [count, [exampleFiles]]`, most frequent path first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct XPathStats {
    pub paths: BTreeMap<String, PathStat>,
    pub skipped: Vec<SkippedFile>,
}

impl Serialize for XPathStats {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.paths.len()))?;
        for (path, stat) in self.by_frequency() {
            m.serialize_entry(path, stat)?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for XPathStats {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let paths = BTreeMap::<String, PathStat>::deserialize(d)?;
        Ok(Self { paths, skipped: Vec::new() })
    }
}

impl XPathStats {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Paths ordered by descending count, then by path.
    pub fn by_frequency(&self) -> Vec<(&String, &PathStat)> {
        let mut v: Vec<_> = self.paths.iter().collect();
        v.sort_by(|a, b| b.1.count.cmp(&a.1.count).then_with(|| a.0.cmp(b.0)));
        v
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("stats serialize");
        out.push(b'\n');
        out
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ValidationError> {
        let stats: Self = serde_json::from_slice(bytes).map_err(|e| ValidationError::Stats(e.to_string()))?;
        if let Some((p, _)) = stats.paths.iter().find(|(_, s)| s.count == 0 || s.examples.is_empty()) {
            return Err(ValidationError::Stats(format!("{p}: count must be >= 1 with at least one example")));
        }
        Ok(stats)
    }
}

/// Per-worker accumulator; merging is associative and commutative, so the
/// result does not depend on how files were sharded.
#[derive(Default)]
struct Partial {
    counts: BTreeMap<String, (u64, BTreeSet<String>)>,
    skipped: Vec<SkippedFile>,
}

impl Partial {
    fn merge(mut self, other: Partial, k: usize) -> Partial {
        for (path, (n, files)) in other.counts {
            let e = self.counts.entry(path).or_default();
            e.0 += n;
            e.1.extend(files);
            while e.1.len() > k {
                e.1.pop_last();
            }
        }
        self.skipped.extend(other.skipped);
        self
    }

    fn file(name: &str, bytes: &[u8], k: usize) -> Partial {
        let mut p = Partial::default();
        match crate::mapping::parse_xml(bytes) {
            Ok(doc) => {
                for (path, _) in walk_paths(&doc) {
                    let e = p.counts.entry(path).or_default();
                    e.0 += 1;
                    if k > 0 {
                        e.1.insert(name.to_string());
                    }
                }
            }
            Err(e) => p.skipped.push(SkippedFile { file: name.to_string(), error: e.to_string() }),
        }
        p
    }

    fn finish(mut self) -> XPathStats {
        self.skipped.sort_by(|a, b| a.file.cmp(&b.file));
        XPathStats {
            paths: self
                .counts
                .into_iter()
                .map(|(p, (count, files))| (p, PathStat { count, examples: files.into_iter().collect() }))
                .collect(),
            skipped: self.skipped,
        }
    }
}

/// Count every non-empty element and attribute path across `docs` in
/// parallel. Unparseable documents are listed in `skipped`. Examples are the
/// `k` smallest file names containing the path.
pub fn collect_xpaths<D: AsRef<[u8]> + Sync>(docs: &[(String, D)], k: usize) -> XPathStats {
    docs.par_iter()
        .map(|(name, bytes)| Partial::file(name, bytes.as_ref(), k))
        .reduce(Partial::default, |a, b| a.merge(b, k))
        .finish()
}

/// [`collect_xpaths`] over files on disk, named by their file name.
pub fn collect_xpaths_from_files(files: &[PathBuf], k: usize) -> XPathStats {
    files
        .par_iter()
        .map(|path| {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string());
            match std::fs::read(path) {
                Ok(bytes) => Partial::file(&name, &bytes, k),
                Err(e) => Partial {
                    skipped: vec![SkippedFile { file: name, error: e.to_string() }],
                    ..Default::default()
                },
            }
        })
        .reduce(Partial::default, |a, b| a.merge(b, k))
        .finish()
}
