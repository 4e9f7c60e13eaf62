//! File-backed, content-addressed store of crawled items.
//!
//! Every record lives in `<root>/<hh>/<hash>/`, where `hash` is the SHA-256 of
//! the payload and `hh` its first two hex digits. The directory holds the raw
//! bytes as `payload` plus one `<id>.json` metadata file per (source, url)
//! that produced them. Files are written to a temporary name and renamed into
//! place, so readers never observe partial records.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("rejected input: {0}")]
    Rejected(String),
    #[error("no archive record {0}")]
    NotFound(String),
    #[error("payload of record {id} no longer matches its hash")]
    Integrity { id: String },
    #[error("archive IO error: {0}")]
    Io(#[from] std::io::Error),
    #[error("archive metadata error in {path}: {source}")]
    Metadata { path: PathBuf, source: serde_json::Error },
}

const DATE_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

mod iso_date {
    use chrono::{DateTime, NaiveDateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&d.format(super::DATE_FORMAT).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        NaiveDateTime::parse_from_str(&s, super::DATE_FORMAT)
            .map(|n| n.and_utc())
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ArchiveRecord {
    pub id: String,
    pub source: String,
    #[serde(with = "iso_date")]
    pub date: DateTime<Utc>,
    pub url: String,
    pub content_type: String,
    pub content_hash: String,
    pub payload_ref: String,
}

impl ArchiveRecord {
    /// The `charset=` parameter of the content type, if any.
    pub fn charset(&self) -> Option<String> {
        charset_of(&self.content_type)
    }
}

pub fn charset_of(content_type: &str) -> Option<String> {
    content_type.split(';').skip(1).find_map(|param| {
        let (k, v) = param.split_once('=')?;
        k.trim()
            .eq_ignore_ascii_case("charset")
            .then(|| v.trim().trim_matches(['"', '\'']).to_string())
            .filter(|v| !v.is_empty())
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn record_id(source: &str, url: &str, hash: &str) -> String {
    let mut h = Sha256::new();
    h.update(source.as_bytes());
    h.update([0]);
    h.update(url.as_bytes());
    h.update([0]);
    h.update(hash.as_bytes());
    hex::encode(h.finalize())[..24].to_string()
}

pub struct Archive {
    root: PathBuf,
    index: RwLock<BTreeMap<String, ArchiveRecord>>,
    source_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    tmp_counter: AtomicU64,
}

impl std::fmt::Debug for Archive {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Archive").field("root", &self.root).finish_non_exhaustive()
    }
}

impl Archive {
    /// Open (creating if needed) the store at `root` and index existing records.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, ArchiveError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let mut index = BTreeMap::new();
        for shard in fs::read_dir(&root)? {
            let shard = shard?.path();
            if !shard.is_dir() {
                continue;
            }
            for object in fs::read_dir(&shard)? {
                let object = object?.path();
                if !object.is_dir() {
                    continue;
                }
                for entry in fs::read_dir(&object)? {
                    let path = entry?.path();
                    if path.extension().is_some_and(|e| e == "json") {
                        let bytes = fs::read(&path)?;
                        let rec: ArchiveRecord = serde_json::from_slice(&bytes)
                            .map_err(|source| ArchiveError::Metadata { path: path.clone(), source })?;
                        index.insert(rec.id.clone(), rec);
                    }
                }
            }
        }
        Ok(Self {
            root,
            index: RwLock::new(index),
            source_locks: Mutex::new(HashMap::new()),
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("index lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Store a payload acquired now.
    pub fn put(&self, source: &str, url: &str, content_type: &str, payload: &[u8]) -> Result<ArchiveRecord, ArchiveError> {
        self.put_at(source, url, content_type, payload, Utc::now())
    }

    /// Store a payload with an explicit acquisition date (imports, fixtures).
    /// Identical (source, url, payload) returns the record already stored.
    pub fn put_at(
        &self,
        source: &str,
        url: &str,
        content_type: &str,
        payload: &[u8],
        date: DateTime<Utc>,
    ) -> Result<ArchiveRecord, ArchiveError> {
        if source.trim().is_empty() {
            return Err(ArchiveError::Rejected("source must be non-empty".into()));
        }
        if payload.is_empty() {
            return Err(ArchiveError::Rejected("payload must be non-empty".into()));
        }
        if date > Utc::now() {
            return Err(ArchiveError::Rejected(format!("date {date} is in the future")));
        }
        let hash = sha256_hex(payload);
        let id = record_id(source, url, &hash);

        let lock = self.source_lock(source);
        let _guard = lock.lock().expect("source lock");
        if let Some(existing) = self.index.read().expect("index lock").get(&id) {
            return Ok(existing.clone());
        }

        let dir = self.root.join(&hash[..2]).join(&hash);
        fs::create_dir_all(&dir)?;
        let payload_path = dir.join("payload");
        if !payload_path.exists() {
            self.write_atomic(&payload_path, payload)?;
        }
        let record = ArchiveRecord {
            id: id.clone(),
            source: source.to_string(),
            date: Utc.timestamp_opt(date.timestamp(), 0).single().unwrap_or(date),
            url: url.to_string(),
            content_type: content_type.to_string(),
            content_hash: hash.clone(),
            payload_ref: format!("{}/{}/payload", &hash[..2], hash),
        };
        let meta = serde_json::to_vec_pretty(&record).expect("record serializes");
        self.write_atomic(&dir.join(format!("{id}.json")), &meta)?;
        self.index.write().expect("index lock").insert(id, record.clone());
        Ok(record)
    }

    fn source_lock(&self, source: &str) -> Arc<Mutex<()>> {
        self.source_locks
            .lock()
            .expect("lock table")
            .entry(source.to_string())
            .or_default()
            .clone()
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), ArchiveError> {
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = path.with_extension(format!("tmp{}.{n}", std::process::id()));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn record(&self, id: &str) -> Result<ArchiveRecord, ArchiveError> {
        self.index
            .read()
            .expect("index lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ArchiveError::NotFound(id.to_string()))
    }

    pub fn payload_path(&self, record: &ArchiveRecord) -> PathBuf {
        self.root.join(&record.payload_ref)
    }

    /// Record and payload bytes; fails if the bytes no longer hash to the
    /// recorded digest.
    pub fn get(&self, id: &str) -> Result<(ArchiveRecord, Vec<u8>), ArchiveError> {
        let record = self.record(id)?;
        let bytes = fs::read(self.payload_path(&record))?;
        if sha256_hex(&bytes) != record.content_hash {
            return Err(ArchiveError::Integrity { id: id.to_string() });
        }
        Ok((record, bytes))
    }

    pub fn verify(&self, id: &str) -> Result<bool, ArchiveError> {
        let record = self.record(id)?;
        let bytes = fs::read(self.payload_path(&record))?;
        Ok(sha256_hex(&bytes) == record.content_hash)
    }

    pub fn contains_url(&self, source: &str, url: &str) -> bool {
        self.index
            .read()
            .expect("index lock")
            .values()
            .any(|r| r.source == source && r.url == url)
    }

    /// Records of `source` (all sources when `None`) dated within
    /// `[from, to]`, ordered by date and then id.
    pub fn list(
        &self,
        source: Option<&str>,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> Result<Vec<ArchiveRecord>, ArchiveError> {
        if from > to {
            return Err(ArchiveError::Rejected(format!("inverted date range {from} > {to}")));
        }
        let mut out: Vec<ArchiveRecord> = self
            .index
            .read()
            .expect("index lock")
            .values()
            .filter(|r| source.is_none_or(|s| r.source == s) && r.date >= from && r.date <= to)
            .cloned()
            .collect();
        out.sort_by(|a, b| a.date.cmp(&b.date).then_with(|| a.id.cmp(&b.id)));
        Ok(out)
    }

    pub fn list_all(&self) -> Vec<ArchiveRecord> {
        self.list(None, DateTime::<Utc>::MIN_UTC, DateTime::<Utc>::MAX_UTC)
            .expect("full range is ordered")
    }

    pub fn select(&self, selection: &Selection) -> Result<Vec<ArchiveRecord>, ArchiveError> {
        self.list(selection.source.as_deref(), selection.from, selection.to)
    }
}

/// Textual archive selection used by the CLI and the service:
/// `bg`, `bg@2016-01-01..2016-01-31`, `*` or `*@2016-01-01..`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub source: Option<String>,
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
}

impl Selection {
    pub fn all() -> Self {
        Self {
            source: None,
            from: DateTime::<Utc>::MIN_UTC,
            to: DateTime::<Utc>::MAX_UTC,
        }
    }

    pub fn parse(text: &str) -> Result<Self, ArchiveError> {
        let (source, range) = match text.split_once('@') {
            Some((s, r)) => (s.trim(), Some(r.trim())),
            None => (text.trim(), None),
        };
        let source = match source {
            "" | "*" => None,
            s => Some(s.to_string()),
        };
        let mut sel = Self { source, ..Self::all() };
        if let Some(range) = range {
            let (from, to) = range
                .split_once("..")
                .ok_or_else(|| ArchiveError::Rejected(format!("selection range {range:?} lacks '..'")))?;
            if !from.trim().is_empty() {
                sel.from = parse_bound(from.trim(), false)?;
            }
            if !to.trim().is_empty() {
                sel.to = parse_bound(to.trim(), true)?;
            }
            if sel.from > sel.to {
                return Err(ArchiveError::Rejected(format!("inverted selection range {range:?}")));
            }
        }
        Ok(sel)
    }
}

fn parse_bound(text: &str, end: bool) -> Result<DateTime<Utc>, ArchiveError> {
    if let Ok(d) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        let t = if end { d.and_hms_opt(23, 59, 59) } else { d.and_hms_opt(0, 0, 0) };
        return Ok(t.expect("valid time").and_utc());
    }
    NaiveDateTime::parse_from_str(text, DATE_FORMAT)
        .map(|n| n.and_utc())
        .map_err(|_| ArchiveError::Rejected(format!("bad date {text:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(s: &str) -> DateTime<Utc> {
        NaiveDateTime::parse_from_str(s, DATE_FORMAT).unwrap().and_utc()
    }

    #[test]
    fn metadata_file_format() {
        let dir = tempfile::tempdir().unwrap();
        let store = Archive::open(dir.path()).unwrap();
        let rec = store
            .put_at(
                "bg",
                "www.aop.bg?newver=2&mode=show_doc&doc_id=706665",
                "text/html; charset=windows-1251",
                b"<html/>",
                at("2016-01-11T12:20:40Z"),
            )
            .unwrap();
        let meta = fs::read_to_string(dir.path().join(&rec.content_hash[..2]).join(&rec.content_hash).join(format!("{}.json", rec.id))).unwrap();
        let keys: Vec<&str> = meta.lines().filter_map(|l| l.trim().split('"').nth(1)).collect();
        assert_eq!(keys, ["id", "source", "date", "url", "contentType", "contentHash", "payloadRef"]);
        assert!(meta.contains("\"date\": \"2016-01-11T12:20:40Z\""));
        assert_eq!(rec.charset().as_deref(), Some("windows-1251"));
    }

    #[test]
    fn idempotent_put_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let store = Archive::open(dir.path()).unwrap();
        let a = store.put("bg", "u", "", b"x").unwrap();
        let b = store.put("bg", "u", "", b"x").unwrap();
        assert_eq!(a, b);
        let c = store.put("bg", "u2", "", b"x").unwrap();
        assert_ne!(a.id, c.id);
        assert_eq!(a.payload_ref, c.payload_ref);
        let reopened = Archive::open(dir.path()).unwrap();
        assert_eq!(reopened.len(), 2);
        assert_eq!(reopened.get(&a.id).unwrap().1, b"x");
    }

    #[test]
    fn rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let store = Archive::open(dir.path()).unwrap();
        assert!(matches!(store.put("bg", "u", "", b""), Err(ArchiveError::Rejected(_))));
        assert!(matches!(store.put(" ", "u", "", b"x"), Err(ArchiveError::Rejected(_))));
        let future = Utc::now() + chrono::Duration::days(1);
        assert!(store.put_at("bg", "u", "", b"x", future).is_err());
        assert!(matches!(store.get("nope"), Err(ArchiveError::NotFound(_))));
    }

    #[test]
    fn corruption_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = Archive::open(dir.path()).unwrap();
        let rec = store.put("bg", "u", "", b"payload").unwrap();
        assert!(store.verify(&rec.id).unwrap());
        let path = store.payload_path(&rec);
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(!store.verify(&rec.id).unwrap());
        assert!(matches!(store.get(&rec.id), Err(ArchiveError::Integrity { .. })));
    }

    #[test]
    fn list_filters_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        let store = Archive::open(dir.path()).unwrap();
        assert!(store.list_all().is_empty());
        let dates = ["2016-01-03T00:00:00Z", "2016-01-01T00:00:00Z", "2016-02-01T00:00:00Z"];
        for (i, d) in dates.iter().enumerate() {
            store.put_at("bg", &format!("u{i}"), "", format!("p{i}").as_bytes(), at(d)).unwrap();
        }
        let (from, to) = (at("2016-01-01T00:00:00Z"), at("2016-01-31T00:00:00Z"));
        let got = store.list(Some("bg"), from, to).unwrap();
        // brute-force oracle
        let mut want: Vec<DateTime<Utc>> = dates.iter().map(|d| at(d)).filter(|d| *d >= from && *d <= to).collect();
        want.sort();
        assert_eq!(got.iter().map(|r| r.date).collect::<Vec<_>>(), want);
        assert_eq!(store.list(Some("bg"), DateTime::<Utc>::MIN_UTC, DateTime::<Utc>::MAX_UTC).unwrap().len(), 3);
        assert!(store.list(Some("cz"), from, to).unwrap().is_empty());
        assert!(store.list(None, to, from).is_err());
    }

    #[test]
    fn concurrent_writers() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(Archive::open(dir.path()).unwrap());
        let handles: Vec<_> = (0..8)
            .map(|t| {
                let store = store.clone();
                std::thread::spawn(move || {
                    (0..20)
                        .map(|i| store.put("bg", &format!("u{}", (i + t) % 25), "", format!("p{i}").as_bytes()).unwrap().id)
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let reopened = Archive::open(dir.path()).unwrap();
        assert_eq!(reopened.len(), store.len());
        for r in reopened.list_all() {
            assert!(reopened.verify(&r.id).unwrap());
        }
    }

    #[test]
    fn selection_syntax() {
        assert_eq!(Selection::parse("bg").unwrap().source.as_deref(), Some("bg"));
        assert_eq!(Selection::parse("*").unwrap(), Selection::all());
        let s = Selection::parse("bg@2016-01-01..2016-01-31").unwrap();
        assert_eq!(s.from, at("2016-01-01T00:00:00Z"));
        assert_eq!(s.to, at("2016-01-31T23:59:59Z"));
        assert!(Selection::parse("bg@2016-02-01..2016-01-01").is_err());
        assert!(Selection::parse("bg@2016").is_err());
    }
}
