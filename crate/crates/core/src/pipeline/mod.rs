//! Per-source pre/post-processing chains that turn archive payloads into
//! well-formed UTF-8 XML documents for the engine.
//!
//! A pipeline file maps source codes to step lists:
//!
//! ```json
//! {
//!   "ted": {
//!     "pre": ["getFile", {"step": "uncompress", "format": "gzip"}],
//!     "post": ["removeFile"]
//!   }
//! }
//! ```
//!
//! Steps pass a list of [`Artifact`] files through a per-run work directory
//! under `$KEX_TMPDIR` (or the system temp dir). Archive payloads are copied
//! in by `getFile` and are never modified.

mod steps;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use indexmap::IndexMap;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::archive::{Archive, ArchiveError, ArchiveRecord};
use crate::engine::NamedDoc;

pub use steps::{csv_to_xml, decode_with_resolution, rewrite_repetitive, CsvOptions, RepetitivePattern};

/// Environment variable naming the directory for intermediate files.
pub const TMPDIR_ENV: &str = "KEX_TMPDIR";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("pipeline config error: {0}")]
    Config(String),
    #[error("no pipeline defined for source {0:?}")]
    UnknownSource(String),
    #[error("step {step} failed: {message}")]
    Step { step: String, message: String },
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("pipeline IO error: {0}")]
    Io(#[from] std::io::Error),
}

/// One intermediate file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    /// Logical name, e.g. the archive member it came from.
    pub name: String,
    pub path: PathBuf,
    /// Character set of the bytes when known; `utf-8` after `reencode`.
    pub charset: Option<String>,
}

/// What a step sees while it runs.
pub struct StepContext<'a> {
    pub record: &'a ArchiveRecord,
    pub store: &'a Archive,
    pub work_dir: &'a Path,
}

impl StepContext<'_> {
    /// A fresh file name inside the work directory.
    pub fn new_path(&self, stem: &str) -> PathBuf {
        static N: AtomicU64 = AtomicU64::new(0);
        let clean: String = stem
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
            .collect();
        self.work_dir.join(format!("{:04}-{clean}", N.fetch_add(1, Ordering::Relaxed)))
    }
}

pub trait Step: Send + Sync {
    fn name(&self) -> &str;

    fn run(&self, ctx: &StepContext<'_>, input: Vec<Artifact>) -> Result<Vec<Artifact>, String>;
}

/// Parameters handed to a step factory: the step object minus its `step` key
/// and the directory of the pipeline file for resolving relative paths.
pub struct StepParams<'a> {
    pub params: &'a Map<String, Value>,
    pub base_dir: &'a Path,
}

impl StepParams<'_> {
    pub fn str(&self, key: &str) -> Result<Option<&str>, String> {
        match self.params.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(format!("parameter {key} must be a string, got {v}")),
        }
    }

    pub fn bool(&self, key: &str, default: bool) -> Result<bool, String> {
        match self.params.get(key) {
            None | Some(Value::Null) => Ok(default),
            Some(Value::Bool(b)) => Ok(*b),
            Some(v) => Err(format!("parameter {key} must be a boolean, got {v}")),
        }
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>, String> {
        Ok(self.str(key)?.map(|p| self.base_dir.join(p)))
    }

    fn reject_unknown(&self, known: &[&str]) -> Result<(), String> {
        match self.params.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(format!("unknown parameter {k}")),
            None => Ok(()),
        }
    }
}

pub type StepFactory = Arc<dyn Fn(&StepParams<'_>) -> Result<Arc<dyn Step>, String> + Send + Sync>;

/// Step identifiers available to pipeline files. Built once at startup and
/// read-only afterwards.
#[derive(Clone)]
pub struct StepRegistry {
    factories: BTreeMap<String, StepFactory>,
}

impl Default for StepRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl StepRegistry {
    pub fn empty() -> Self {
        Self { factories: BTreeMap::new() }
    }

    /// getFile, uncompress, reencode, csvToXml, htmlToXml, rewriteRepetitive
    /// and removeFile.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        steps::register_builtins(&mut r);
        r
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&StepParams<'_>) -> Result<Arc<dyn Step>, String> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Arc::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    fn build(&self, spec: &Value, base_dir: &Path) -> Result<Arc<dyn Step>, String> {
        let empty = Map::new();
        let (name, params) = match spec {
            Value::String(s) => (s.as_str(), &empty),
            Value::Object(m) => match m.get("step") {
                Some(Value::String(s)) => (s.as_str(), m),
                _ => return Err("step object lacks a string \"step\" key".into()),
            },
            v => return Err(format!("a step is a name or an object, got {v}")),
        };
        let mut params = params.clone();
        params.remove("step");
        let factory = self.factories.get(name).ok_or_else(|| format!("unknown step {name:?}"))?;
        factory(&StepParams { params: &params, base_dir }).map_err(|e| format!("step {name}: {e}"))
    }
}

#[derive(Clone)]
pub struct SourcePipeline {
    pub pre: Vec<Arc<dyn Step>>,
    pub post: Vec<Arc<dyn Step>>,
}

impl std::fmt::Debug for SourcePipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SourcePipeline")
            .field("pre", &self.pre.iter().map(|s| s.name()).collect::<Vec<_>>())
            .field("post", &self.post.iter().map(|s| s.name()).collect::<Vec<_>>())
            .finish()
    }
}

/// Pipelines for every configured source.
#[derive(Debug, Clone, Default)]
pub struct PipelineDef {
    pub sources: IndexMap<String, SourcePipeline>,
    pub work_root: Option<PathBuf>,
}

impl PipelineDef {
    /// Parse a pipeline file. Every step is instantiated, so unknown steps
    /// and bad parameters are reported here rather than per record.
    pub fn parse(text: &str, base_dir: &Path, registry: &StepRegistry) -> Result<Self, PipelineError> {
        let root: Value = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let Value::Object(sources) = root else {
            return Err(PipelineError::Config("pipeline file must be a JSON object keyed by source".into()));
        };
        let mut def = PipelineDef::default();
        for (source, body) in sources {
            let Value::Object(body) = body else {
                return Err(PipelineError::Config(format!("{source}: expected {{\"pre\": [...], \"post\": [...]}}")));
            };
            if let Some(k) = body.keys().find(|k| *k != "pre" && *k != "post") {
                return Err(PipelineError::Config(format!("{source}: unknown key {k}")));
            }
            let list = |key: &str| -> Result<Vec<Arc<dyn Step>>, PipelineError> {
                match body.get(key) {
                    None => Ok(Vec::new()),
                    Some(Value::Array(items)) => items
                        .iter()
                        .enumerate()
                        .map(|(i, s)| {
                            registry
                                .build(s, base_dir)
                                .map_err(|e| PipelineError::Config(format!("{source}.{key}[{i}]: {e}")))
                        })
                        .collect(),
                    Some(_) => Err(PipelineError::Config(format!("{source}.{key} must be an array"))),
                }
            };
            let pre = list("pre")?;
            let post = list("post")?;
            match pre.first().map(|s| s.name()) {
                Some(steps::GET_FILE) => {}
                Some(other) => {
                    return Err(PipelineError::Config(format!("{source}.pre must start with getFile, not {other}")))
                }
                None => return Err(PipelineError::Config(format!("{source}.pre is empty"))),
            }
            def.sources.insert(source, SourcePipeline { pre, post });
        }
        Ok(def)
    }

    pub fn load(path: impl AsRef<Path>, registry: &StepRegistry) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), registry)
    }

    /// `getFile` only, for every source: the payload is already UTF-8 XML.
    pub fn passthrough() -> Self {
        Self::default()
    }

    fn work_root(&self) -> PathBuf {
        self.work_root
            .clone()
            .or_else(|| std::env::var_os(TMPDIR_ENV).map(PathBuf::from))
            .unwrap_or_else(std::env::temp_dir)
    }
}

fn run_steps(
    steps: &[Arc<dyn Step>],
    ctx: &StepContext<'_>,
    mut artifacts: Vec<Artifact>,
) -> Result<Vec<Artifact>, PipelineError> {
    for step in steps {
        artifacts = step.run(ctx, artifacts).map_err(|message| PipelineError::Step {
            step: step.name().to_string(),
            message,
        })?;
    }
    Ok(artifacts)
}

/// Check that a pipeline output is UTF-8, well formed and does not declare
/// another encoding.
fn check_output(bytes: &[u8]) -> Result<(), String> {
    let text = std::str::from_utf8(bytes).map_err(|e| format!("output is not UTF-8 ({e}); add a reencode step"))?;
    if let Some(enc) = steps::declared_encoding(text) {
        if !enc.eq_ignore_ascii_case("utf-8") && !enc.eq_ignore_ascii_case("utf8") {
            return Err(format!("output declares encoding {enc}; add a reencode step"));
        }
    }
    crate::xmlutil::check_well_formed(text).map_err(|e| format!("output is not well-formed XML: {e}"))
}

/// Run the pre steps of the record's source, read the resulting documents,
/// then run the post steps. The post steps run even when a pre step fails.
pub fn run_pipeline(def: &PipelineDef, record: &ArchiveRecord, store: &Archive) -> Result<Vec<NamedDoc>, PipelineError> {
    let default_pipeline;
    let pipeline = match def.sources.get(&record.source) {
        Some(p) => p,
        None if def.sources.is_empty() => {
            default_pipeline = SourcePipeline { pre: vec![Arc::new(steps::GetFile)], post: vec![Arc::new(steps::RemoveFile)] };
            &default_pipeline
        }
        None => return Err(PipelineError::UnknownSource(record.source.clone())),
    };
    static RUN: AtomicU64 = AtomicU64::new(0);
    let work_dir = def.work_root().join(format!(
        "kex-{}-{}-{}",
        record.id,
        std::process::id(),
        RUN.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::create_dir_all(&work_dir)?;
    let ctx = StepContext { record, store, work_dir: &work_dir };

    let produced = run_steps(&pipeline.pre, &ctx, Vec::new()).and_then(|artifacts| {
        let mut docs = Vec::with_capacity(artifacts.len());
        for a in &artifacts {
            let bytes = std::fs::read(&a.path)?;
            check_output(&bytes).map_err(|message| PipelineError::Step { step: "output".into(), message })?;
            let name = if artifacts.len() == 1 { record.id.clone() } else { format!("{}:{}", record.id, a.name) };
            docs.push(NamedDoc { name, bytes });
        }
        Ok((docs, artifacts))
    });
    let leftovers = match &produced {
        Ok((_, a)) => a.clone(),
        Err(_) => Vec::new(),
    };
    run_steps(&pipeline.post, &ctx, leftovers)?;
    produced.map(|(docs, _)| docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_rejects_bad_configs() {
        let reg = StepRegistry::with_builtins();
        let base = Path::new(".");
        for (text, needle) in [
            (r#"{"ted":{"pre":["nope"]}}"#, "unknown step"),
            (r#"{"ted":{"pre":[{"step":"uncompress","format":"rar"}]}}"#, "rar"),
            (r#"{"ted":{"pre":["uncompress"]}}"#, "must start with getFile"),
            (r#"{"ted":{"pre":[]}}"#, "empty"),
            (r#"{"ted":{"pre":["getFile"],"cleanup":[]}}"#, "unknown key"),
            (r#"{"ted":{"pre":["getFile",{"step":"rewriteRepetitive","pattern":"cpv"}]}}"#, "{n}"),
            (r#"{"ted":{"pre":["getFile",{"step":"reencode","from":"klingon"}]}}"#, "klingon"),
            (r#"{"ted":{"pre":["getFile",{"step":"csvToXml","headerRow":"yes"}]}}"#, "boolean"),
        ] {
            let err = PipelineDef::parse(text, base, &reg).unwrap_err().to_string();
            assert!(err.contains(needle), "{text}: {err}");
        }
        let ok = PipelineDef::parse(r#"{"ted":{"pre":["getFile",{"step":"uncompress","format":"gzip"}],"post":["removeFile"]}}"#, base, &reg).unwrap();
        assert_eq!(ok.sources["ted"].pre.len(), 2);
    }

    struct Upper;

    impl Step for Upper {
        fn name(&self) -> &str {
            "upper"
        }

        fn run(&self, _: &StepContext<'_>, input: Vec<Artifact>) -> Result<Vec<Artifact>, String> {
            for a in &input {
                let t = std::fs::read_to_string(&a.path).map_err(|e| e.to_string())?;
                std::fs::write(&a.path, t.to_uppercase()).map_err(|e| e.to_string())?;
            }
            Ok(input)
        }
    }

    #[test]
    fn custom_steps_register() {
        let mut reg = StepRegistry::with_builtins();
        reg.register("upper", |_| Ok(Arc::new(Upper) as Arc<dyn Step>));
        assert!(reg.names().any(|n| n == "upper"));
        let dir = tempfile::tempdir().unwrap();
        let store = Archive::open(dir.path().join("a")).unwrap();
        let rec = store.put("s", "u", "text/xml", b"<a>x</a>").unwrap();
        let mut def = PipelineDef::parse(r#"{"s":{"pre":["getFile","upper"],"post":["removeFile"]}}"#, dir.path(), &reg).unwrap();
        def.work_root = Some(dir.path().join("work"));
        let docs = run_pipeline(&def, &rec, &store).unwrap();
        assert_eq!(docs[0].bytes, b"<A>X</A>");
        assert_eq!(std::fs::read_dir(dir.path().join("work")).unwrap().count(), 0);
        assert_eq!(store.get(&rec.id).unwrap().1, b"<a>x</a>");
    }
}
