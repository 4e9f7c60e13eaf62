//! Mapping execution: entity instantiation over normalized XML, id blocks,
//! query caching, pooled dependency-ordered flushes and the parallel batch
//! runner.

mod alloc;
mod graph;
mod process;
mod sink;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapping::{MappingError, MappingPlan};

pub use alloc::{IdAllocator, IdBlocks};
pub use graph::{derive_dependency_graph, Column, DependencyGraph, TableDef};
pub use process::{EntityPool, Processor, QueryCache};
pub use sink::{tsv_escape, MemorySink, Sink, SqlSink, TsvSink, SQL_ROWS_PER_STATEMENT};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("engine configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error("sink failed after {emitted} rows were written: {source}")]
    Sink { emitted: u64, source: std::io::Error },
}

/// One row in flight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EntityInstance {
    pub entity: String,
    pub floating_id: u64,
    pub attrs: IndexMap<String, String>,
    pub parent_ref: Option<(String, u64)>,
    pub fulfilled: bool,
}

impl EntityInstance {
    pub fn new(entity: &str, floating_id: u64) -> Self {
        Self {
            entity: entity.to_string(),
            floating_id,
            attrs: IndexMap::new(),
            parent_ref: None,
            fulfilled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct EngineConfig {
    pub workers: usize,
    pub block_size: u64,
    pub flush_threshold: usize,
    /// Input items a worker claims at a time.
    pub batch_size: usize,
    pub cache: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            block_size: 1000,
            flush_threshold: 10_000,
            batch_size: 8,
            cache: true,
        }
    }
}

/// A normalized XML document ready for the engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedDoc {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocFailure {
    pub item: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunReport {
    pub docs: u64,
    pub failures: Vec<DocFailure>,
    pub rows: BTreeMap<String, u64>,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

impl RunReport {
    fn absorb(&mut self, rows: BTreeMap<String, u64>) {
        for (t, n) in rows {
            *self.rows.entry(t).or_default() += n;
        }
    }
}

/// Evaluate the mapping on one document without touching any sink; ids
/// start at 1.
pub fn parse_preview(xml: &[u8], plan: &MappingPlan) -> Result<Vec<EntityInstance>, MappingError> {
    let doc = crate::mapping::parse_xml(xml)?;
    let Some(root) = &plan.root else {
        return Ok(Vec::new());
    };
    let alloc = IdAllocator::new(1000);
    let mut ids = IdBlocks::new(&alloc);
    let mut proc = Processor { ids: &mut ids, cache: None, doc_seq: 0 };
    Ok(proc.process_document(&doc, root))
}

/// Load every item, run the mapping over the resulting documents on
/// `config.workers` threads and stream rows to `sink`.
///
/// Workers claim items in FIFO batches. Each keeps its own pool and query
/// cache and draws ids from a shared allocator in blocks. A worker flushes
/// its pool under the sink lock once it holds `flush_threshold` rows, checked
/// after each document, so a flush always contains complete documents.
pub fn run_batch<T, N, L>(
    items: &[T],
    name: N,
    load: L,
    plan: &MappingPlan,
    graph: &DependencyGraph,
    sink: &mut dyn Sink,
    config: &EngineConfig,
) -> Result<RunReport, EngineError>
where
    T: Sync,
    N: Fn(&T) -> String + Sync,
    L: Fn(&T) -> Result<Vec<NamedDoc>, String> + Sync,
{
    if config.workers == 0 {
        return Err(EngineError::Config("workers must be at least 1".into()));
    }
    let Some(root) = &plan.root else {
        sink.finish().map_err(|source| EngineError::Sink { emitted: 0, source })?;
        return Ok(RunReport::default());
    };
    for p in root.walk() {
        if graph.table(&p.table).is_none() {
            return Err(EngineError::Config(format!("entity {} has no table in the dependency graph", p.table)));
        }
    }

    let alloc = IdAllocator::new(config.block_size);
    let next = AtomicUsize::new(0);
    let doc_seq = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let shared = Mutex::new((sink, RunReport::default(), None::<std::io::Error>));
    let batch = config.batch_size.max(1);

    let flush = |pool: &mut EntityPool| {
        let mut guard = shared.lock().expect("sink lock");
        let (sink, report, error) = &mut *guard;
        if error.is_some() {
            return;
        }
        match pool.flush(graph, &mut **sink) {
            Ok(rows) => report.absorb(rows),
            Err((rows, e)) => {
                report.absorb(rows);
                *error = Some(e);
                abort.store(true, Ordering::SeqCst);
            }
        }
    };

    std::thread::scope(|scope| {
        for _ in 0..config.workers {
            scope.spawn(|| {
                let mut ids = IdBlocks::new(&alloc);
                let mut cache = QueryCache::default();
                let mut pool = EntityPool::default();
                let mut local = RunReport::default();
                'claim: loop {
                    let start = next.fetch_add(batch, Ordering::SeqCst);
                    if start >= items.len() || abort.load(Ordering::SeqCst) {
                        break;
                    }
                    for item in &items[start..(start + batch).min(items.len())] {
                        if abort.load(Ordering::SeqCst) {
                            break 'claim;
                        }
                        let docs = match load(item) {
                            Ok(d) => d,
                            Err(e) => {
                                local.failures.push(DocFailure { item: name(item), error: e });
                                continue;
                            }
                        };
                        for d in docs {
                            let seq = doc_seq.fetch_add(1, Ordering::Relaxed) as u64;
                            let parsed = match crate::mapping::parse_xml(&d.bytes) {
                                Ok(p) => p,
                                Err(e) => {
                                    local.failures.push(DocFailure { item: d.name, error: e.to_string() });
                                    continue;
                                }
                            };
                            let mut proc = Processor {
                                ids: &mut ids,
                                cache: config.cache.then_some(&mut cache),
                                doc_seq: seq,
                            };
                            pool.extend(proc.process_document(&parsed, root));
                            local.docs += 1;
                            if pool.len() >= config.flush_threshold {
                                flush(&mut pool);
                            }
                        }
                    }
                }
                if !pool.is_empty() {
                    flush(&mut pool);
                }
                let mut guard = shared.lock().expect("sink lock");
                let report = &mut guard.1;
                report.docs += local.docs;
                report.failures.extend(local.failures);
                report.cache_hits += cache.hits;
                report.cache_misses += cache.misses;
            });
        }
    });

    let (sink, mut report, error) = shared.into_inner().expect("sink lock");
    let emitted: u64 = report.rows.values().sum();
    if let Some(source) = error {
        return Err(EngineError::Sink { emitted, source });
    }
    sink.finish().map_err(|source| EngineError::Sink { emitted, source })?;
    report.failures.sort_by(|a, b| a.item.cmp(&b.item));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::{import_plan, load_schema};

    const SCHEMA: &str = r#"{"db":"document","type":"Model","repetitive":"true","text":"Document","nodes":[
        {"db":"attribute1","type":"TextField"},
        {"db":"attribute2","type":"NullBooleanField"},
        {"db":"childEntity","type":"Model","repetitive":"true","nodes":[{"db":"attribute1","type":"TextField"}]}]}"#;

    const MAPPING: &str = r#"{"version":"2015.11.17.01","document":{
        "attribute1":{"__xpath__":["/document/attr1","/document/attr1/@name"]},
        "attribute2":{"__xpath__":["/document/attrBoolean"],"__conversion__":{"NO":"false"}},
        "childEntity":{"attribute1":{"__xpath__":["/document/child/attr1"]},"__xpath__":["/document/child"]},
        "__xpath__":["/document"]}}"#;

    const XML: &str = r#"<xml>
  <document><attr1 name="document1">document 1</attr1></document>
  <document><attr1 name="document2"/><attrBoolean>NO</attrBoolean><child><attr1>Child attribute</attr1></child></document>
  <document><attr1>document 3</attr1></document>
  <document><unmapped>x</unmapped></document>
</xml>"#;

    fn plan() -> (MappingPlan, DependencyGraph) {
        let schema = load_schema(SCHEMA.as_bytes()).unwrap();
        (import_plan(MAPPING.as_bytes(), &schema).unwrap(), derive_dependency_graph(&schema).unwrap())
    }

    #[test]
    fn preview_follows_sample_docs() {
        let (plan, _) = plan();
        let rows = parse_preview(XML.as_bytes(), &plan).unwrap();
        let docs: Vec<&EntityInstance> = rows.iter().filter(|r| r.entity == "document").collect();
        assert_eq!(docs.len(), 3);
        assert_eq!(docs[1].attrs["attribute1"], "document2");
        assert_eq!(docs[1].attrs["attribute2"], "false");
        let child: Vec<&EntityInstance> = rows.iter().filter(|r| r.entity == "childEntity").collect();
        assert_eq!(child.len(), 1);
        assert_eq!(child[0].parent_ref, Some(("document".to_string(), docs[1].floating_id)));
        assert_eq!(child[0].attrs["document_id"], docs[1].floating_id.to_string());
    }

    #[test]
    fn threshold_does_not_change_contents() {
        let (plan, graph) = plan();
        let items: Vec<String> = (0..5).map(|_| XML.to_string()).collect();
        let run = |threshold| {
            let mut sink = MemorySink::default();
            let cfg = EngineConfig { flush_threshold: threshold, ..Default::default() };
            let report = run_batch(
                &items,
                |_| "x".into(),
                |s| Ok(vec![NamedDoc { name: "x".into(), bytes: s.as_bytes().to_vec() }]),
                &plan,
                &graph,
                &mut sink,
                &cfg,
            )
            .unwrap();
            let mut rows: Vec<EntityInstance> = sink.batches.into_iter().flat_map(|(_, r)| r).collect();
            rows.sort_by(|a, b| (&a.entity, a.floating_id).cmp(&(&b.entity, b.floating_id)));
            (report.rows, rows)
        };
        let (a_counts, a) = run(1);
        let (b_counts, b) = run(1_000_000);
        assert_eq!(a, b);
        assert_eq!(a_counts, b_counts);
        assert_eq!(a_counts["document"], 15);
    }

    #[test]
    fn flush_order_follows_graph() {
        let (plan, graph) = plan();
        let mut sink = MemorySink::default();
        run_batch(
            &[XML],
            |_| "x".into(),
            |s| Ok(vec![NamedDoc { name: "x".into(), bytes: s.as_bytes().to_vec() }]),
            &plan,
            &graph,
            &mut sink,
            &EngineConfig::default(),
        )
        .unwrap();
        let order: Vec<&str> = sink.batches.iter().map(|(t, _)| t.as_str()).collect();
        assert_eq!(order, ["document", "childEntity"]);
    }

    #[test]
    fn failures_recorded_and_empty_selection() {
        let (plan, graph) = plan();
        let mut sink = MemorySink::default();
        let items = ["<xml>", "not loaded", XML];
        let report = run_batch(
            &items,
            |s| s.to_string(),
            |s| {
                if *s == "not loaded" {
                    Err("missing payload".into())
                } else {
                    Ok(vec![NamedDoc { name: s.to_string(), bytes: s.as_bytes().to_vec() }])
                }
            },
            &plan,
            &graph,
            &mut sink,
            &EngineConfig::default(),
        )
        .unwrap();
        assert_eq!(report.docs, 1);
        assert_eq!(report.failures.len(), 2);
        let empty: [&str; 0] = [];
        let report = run_batch(&empty, |_| String::new(), |_| Ok(vec![]), &plan, &graph, &mut MemorySink::default(), &EngineConfig::default()).unwrap();
        assert_eq!(report, RunReport::default());
    }

    struct BrokenSink;

    impl Sink for BrokenSink {
        fn write_batch(&mut self, _: &TableDef, _: &[EntityInstance]) -> std::io::Result<()> {
            Err(std::io::Error::other("disk full"))
        }
    }

    #[test]
    fn sink_error_aborts() {
        let (plan, graph) = plan();
        let err = run_batch(
            &[XML],
            |_| "x".into(),
            |s| Ok(vec![NamedDoc { name: "x".into(), bytes: s.as_bytes().to_vec() }]),
            &plan,
            &graph,
            &mut BrokenSink,
            &EngineConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, EngineError::Sink { emitted: 0, .. }));
    }
}
