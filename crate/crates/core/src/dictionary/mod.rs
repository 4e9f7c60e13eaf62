//! Key dictionaries: synsets of key variants, their curation edits and the
//! on-disk JSON format shared with the service and validation layers.

mod induce;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use induce::{group_synsets, propose_keys, term_frequencies, Candidate, TermCount, TermStats};

#[derive(Debug, Error)]
pub enum DictionaryError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("unknown synset {0}")]
    UnknownSynset(SynsetId),
    #[error("variant {variant:?} already belongs to synset {owner}")]
    VariantCollision { variant: String, owner: SynsetId },
    #[error("parent cycle through {0}")]
    ParentCycle(SynsetId),
    #[error("invalid dictionary: {0}")]
    Invalid(String),
    #[error("dictionary file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dictionary JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Stable key identifier such as `K185`.
///
/// Ordered naturally: alphabetic prefix first, then the numeric suffix as a
/// number, so `K2 < K10`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SynsetId(pub String);

impl SynsetId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn split(&self) -> (&str, Option<u64>) {
        let digits_at = self.0.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        let (head, tail) = self.0.split_at(digits_at);
        (head, tail.parse().ok())
    }
}

impl Ord for SynsetId {
    fn cmp(&self, other: &Self) -> Ordering {
        let (ha, na) = self.split();
        let (hb, nb) = other.split();
        ha.cmp(hb).then(na.cmp(&nb)).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for SynsetId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for SynsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SynsetId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synset {
    pub id: SynsetId,
    pub canonical: String,
    pub variants: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<SynsetId>,
}

impl Synset {
    pub fn new(id: impl Into<String>, variants: &[&str]) -> Self {
        Self {
            id: SynsetId::new(id),
            canonical: variants.first().map(|s| s.to_string()).unwrap_or_default(),
            variants: variants.iter().map(|s| s.to_string()).collect(),
            parent: None,
        }
    }

    pub fn with_parent(mut self, parent: impl Into<String>) -> Self {
        self.parent = Some(SynsetId::new(parent));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dictionary {
    pub language: String,
    pub version: u64,
    pub synsets: Vec<Synset>,
}

/// One curation edit. Every committed edit bumps the version by one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "camelCase")]
pub enum DictionaryEdit {
    AddSynset { canonical: String, variants: Vec<String> },
    AddVariant { id: SynsetId, variant: String },
    RemoveVariant { id: SynsetId, variant: String },
    SetCanonical { id: SynsetId, canonical: String },
    Merge { keep: SynsetId, absorb: SynsetId },
    Split { id: SynsetId, variants: Vec<String> },
    SetParent { id: SynsetId, parent: Option<SynsetId> },
    Remove { id: SynsetId },
}

impl Dictionary {
    pub fn new(language: impl Into<String>, synsets: Vec<Synset>) -> Result<Self, DictionaryError> {
        let mut dict = Self {
            language: language.into(),
            version: 1,
            synsets,
        };
        dict.synsets.sort_by(|a, b| a.id.cmp(&b.id));
        dict.validate()?;
        Ok(dict)
    }

    pub fn is_empty(&self) -> bool {
        self.synsets.is_empty()
    }

    pub fn len(&self) -> usize {
        self.synsets.len()
    }

    pub fn get(&self, id: &SynsetId) -> Option<&Synset> {
        self.synsets.iter().find(|s| &s.id == id)
    }

    fn get_mut(&mut self, id: &SynsetId) -> Result<&mut Synset, DictionaryError> {
        self.synsets
            .iter_mut()
            .find(|s| &s.id == id)
            .ok_or_else(|| DictionaryError::UnknownSynset(id.clone()))
    }

    pub fn contains(&self, id: &SynsetId) -> bool {
        self.get(id).is_some()
    }

    /// Ancestors of `id` from the root down, excluding `id` itself.
    pub fn ancestors(&self, id: &SynsetId) -> Vec<SynsetId> {
        let mut chain = Vec::new();
        let mut cur = self.get(id).and_then(|s| s.parent.clone());
        while let Some(p) = cur {
            if chain.contains(&p) || chain.len() > self.synsets.len() {
                break;
            }
            cur = self.get(&p).and_then(|s| s.parent.clone());
            chain.push(p);
        }
        chain.reverse();
        chain
    }

    /// Check every structural invariant.
    pub fn validate(&self) -> Result<(), DictionaryError> {
        if self.language.trim().is_empty()
            || !self.language.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
        {
            return Err(DictionaryError::Invalid(format!(
                "language tag {:?} is not a BCP-47 tag",
                self.language
            )));
        }
        let mut ids = HashSet::new();
        let mut owners: HashMap<&str, &SynsetId> = HashMap::new();
        for s in &self.synsets {
            if !ids.insert(&s.id) {
                return Err(DictionaryError::Invalid(format!("duplicate synset id {}", s.id)));
            }
            if s.variants.is_empty() {
                return Err(DictionaryError::Invalid(format!("synset {} has no variants", s.id)));
            }
            if !s.variants.contains(&s.canonical) {
                return Err(DictionaryError::Invalid(format!(
                    "canonical {:?} of {} is not one of its variants",
                    s.canonical, s.id
                )));
            }
            for v in &s.variants {
                if let Some(owner) = owners.insert(v.as_str(), &s.id) {
                    return Err(DictionaryError::VariantCollision {
                        variant: v.clone(),
                        owner: owner.clone(),
                    });
                }
            }
        }
        for s in &self.synsets {
            if let Some(p) = &s.parent {
                if !ids.contains(p) {
                    return Err(DictionaryError::UnknownSynset(p.clone()));
                }
            }
        }
        // parent chains must terminate
        let parent: HashMap<&SynsetId, &SynsetId> = self
            .synsets
            .iter()
            .filter_map(|s| s.parent.as_ref().map(|p| (&s.id, p)))
            .collect();
        for s in &self.synsets {
            let mut seen = HashSet::new();
            let mut cur = &s.id;
            while let Some(next) = parent.get(cur) {
                if !seen.insert(*next) {
                    return Err(DictionaryError::ParentCycle(s.id.clone()));
                }
                cur = next;
            }
        }
        Ok(())
    }

    /// Next free `K<n>` identifier.
    pub fn next_id(&self) -> SynsetId {
        let max = self
            .synsets
            .iter()
            .filter_map(|s| s.id.split().1)
            .max()
            .unwrap_or(0);
        SynsetId(format!("K{}", max + 1))
    }

    /// Apply an edit atomically: the dictionary is unchanged when the edit
    /// is rejected. Returns the synset the edit created, if any.
    pub fn apply(&mut self, edit: &DictionaryEdit) -> Result<Option<SynsetId>, DictionaryError> {
        let mut next = self.clone();
        let created = next.apply_unchecked(edit)?;
        next.synsets.sort_by(|a, b| a.id.cmp(&b.id));
        next.validate()?;
        next.version = self.version + 1;
        *self = next;
        Ok(created)
    }

    fn apply_unchecked(&mut self, edit: &DictionaryEdit) -> Result<Option<SynsetId>, DictionaryError> {
        match edit {
            DictionaryEdit::AddSynset { canonical, variants } => {
                let id = self.next_id();
                let mut all = vec![canonical.clone()];
                all.extend(variants.iter().filter(|v| *v != canonical).cloned());
                self.synsets.push(Synset {
                    id: id.clone(),
                    canonical: canonical.clone(),
                    variants: all,
                    parent: None,
                });
                Ok(Some(id))
            }
            DictionaryEdit::AddVariant { id, variant } => {
                let s = self.get_mut(id)?;
                if !s.variants.contains(variant) {
                    s.variants.push(variant.clone());
                }
                Ok(None)
            }
            DictionaryEdit::RemoveVariant { id, variant } => {
                let s = self.get_mut(id)?;
                if &s.canonical == variant {
                    return Err(DictionaryError::Invalid(format!(
                        "cannot remove canonical variant {variant:?} of {id}"
                    )));
                }
                s.variants.retain(|v| v != variant);
                Ok(None)
            }
            DictionaryEdit::SetCanonical { id, canonical } => {
                self.get_mut(id)?.canonical = canonical.clone();
                Ok(None)
            }
            DictionaryEdit::Merge { keep, absorb } => {
                if keep == absorb {
                    return Err(DictionaryError::Invalid(format!("cannot merge {keep} into itself")));
                }
                let pos = self
                    .synsets
                    .iter()
                    .position(|s| &s.id == absorb)
                    .ok_or_else(|| DictionaryError::UnknownSynset(absorb.clone()))?;
                let absorbed = self.synsets.remove(pos);
                let target = self.get_mut(keep)?;
                for v in absorbed.variants {
                    if !target.variants.contains(&v) {
                        target.variants.push(v);
                    }
                }
                for s in &mut self.synsets {
                    if s.parent.as_ref() == Some(absorb) {
                        s.parent = Some(keep.clone());
                    }
                    if s.parent.as_ref() == Some(&s.id) {
                        s.parent = None;
                    }
                }
                Ok(None)
            }
            DictionaryEdit::Split { id, variants } => {
                if variants.is_empty() {
                    return Err(DictionaryError::EmptyInput("split variants"));
                }
                let new_id = self.next_id();
                let s = self.get_mut(id)?;
                if variants.contains(&s.canonical) {
                    return Err(DictionaryError::Invalid(format!(
                        "canonical {:?} must stay in {id}",
                        s.canonical
                    )));
                }
                for v in variants {
                    if !s.variants.contains(v) {
                        return Err(DictionaryError::Invalid(format!("{v:?} is not a variant of {id}")));
                    }
                }
                s.variants.retain(|v| !variants.contains(v));
                let parent = s.parent.clone();
                self.synsets.push(Synset {
                    id: new_id.clone(),
                    canonical: variants[0].clone(),
                    variants: variants.clone(),
                    parent,
                });
                Ok(Some(new_id))
            }
            DictionaryEdit::SetParent { id, parent } => {
                if let Some(p) = parent {
                    if !self.contains(p) {
                        return Err(DictionaryError::UnknownSynset(p.clone()));
                    }
                    if p == id {
                        return Err(DictionaryError::ParentCycle(id.clone()));
                    }
                }
                self.get_mut(id)?.parent = parent.clone();
                Ok(None)
            }
            DictionaryEdit::Remove { id } => {
                if let Some(child) = self.synsets.iter().find(|s| s.parent.as_ref() == Some(id)) {
                    return Err(DictionaryError::Invalid(format!(
                        "synset {id} is the parent of {}",
                        child.id
                    )));
                }
                let before = self.synsets.len();
                self.synsets.retain(|s| &s.id != id);
                if self.synsets.len() == before {
                    return Err(DictionaryError::UnknownSynset(id.clone()));
                }
                Ok(None)
            }
        }
    }

    pub fn add_variant(&mut self, id: &SynsetId, variant: &str) -> Result<(), DictionaryError> {
        self.apply(&DictionaryEdit::AddVariant {
            id: id.clone(),
            variant: variant.to_string(),
        })
        .map(|_| ())
    }

    pub fn merge_synsets(&mut self, keep: &SynsetId, absorb: &SynsetId) -> Result<(), DictionaryError> {
        self.apply(&DictionaryEdit::Merge {
            keep: keep.clone(),
            absorb: absorb.clone(),
        })
        .map(|_| ())
    }

    /// Move `variants` out of `id` into a fresh synset; returns the new id.
    pub fn split_synset(&mut self, id: &SynsetId, variants: &[&str]) -> Result<SynsetId, DictionaryError> {
        self.apply(&DictionaryEdit::Split {
            id: id.clone(),
            variants: variants.iter().map(|s| s.to_string()).collect(),
        })
        .map(|c| c.expect("split creates a synset"))
    }

    pub fn set_parent(&mut self, id: &SynsetId, parent: Option<&SynsetId>) -> Result<(), DictionaryError> {
        self.apply(&DictionaryEdit::SetParent {
            id: id.clone(),
            parent: parent.cloned(),
        })
        .map(|_| ())
    }

    pub fn remove_synset(&mut self, id: &SynsetId) -> Result<(), DictionaryError> {
        self.apply(&DictionaryEdit::Remove { id: id.clone() }).map(|_| ())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, DictionaryError> {
        let mut dict: Dictionary = serde_json::from_slice(bytes)?;
        dict.synsets.sort_by(|a, b| a.id.cmp(&b.id));
        dict.validate()?;
        Ok(dict)
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("dictionary serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DictionaryError> {
        Self::from_json(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DictionaryError> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json())?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Canonical label for every synset, keyed by id.
    pub fn canonicals(&self) -> BTreeMap<SynsetId, &str> {
        self.synsets.iter().map(|s| (s.id.clone(), s.canonical.as_str())).collect()
    }
}
