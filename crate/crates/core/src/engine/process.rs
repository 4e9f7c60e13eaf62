//! Recursive instantiation of mapped entities over one XML document.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io;

use roxmltree::{Document, Node, NodeId};

use super::alloc::IdBlocks;
use super::graph::DependencyGraph;
use super::sink::Sink;
use super::EntityInstance;
use crate::mapping::{AttributePlan, EntityPlan, Link};
use crate::xpath::{node_value, select_absolute, select_relative};

/// Memoized relative-path selections, keyed by document, context node and
/// path.
#[derive(Debug, Default)]
pub struct QueryCache {
    map: HashMap<(u64, NodeId, Vec<String>), Vec<NodeId>>,
    pub hits: u64,
    pub misses: u64,
}

impl QueryCache {
    /// Drop entries of previous documents; node ids are only meaningful
    /// within one parsed document.
    pub fn start_document(&mut self) {
        self.map.clear();
    }
}

pub struct Processor<'c, 'a> {
    pub ids: &'c mut IdBlocks<'a>,
    pub cache: Option<&'c mut QueryCache>,
    pub doc_seq: u64,
}

impl Processor<'_, '_> {
    fn select<'d, 'i>(&mut self, doc: &'d Document<'i>, ctx: Node<'d, 'i>, steps: &[String]) -> Vec<Node<'d, 'i>> {
        let Some(cache) = self.cache.as_deref_mut() else {
            return select_relative(ctx, steps);
        };
        let key = (self.doc_seq, ctx.id(), steps.to_vec());
        if let Some(ids) = cache.map.get(&key) {
            cache.hits += 1;
            return ids.iter().map(|id| doc.get_node(*id).expect("cached node")).collect();
        }
        cache.misses += 1;
        let nodes = select_relative(ctx, steps);
        cache.map.insert(key, nodes.iter().map(|n| n.id()).collect());
        nodes
    }

    /// First non-empty value among the attribute's sources that belong to
    /// `prefix`, after conversion.
    pub fn first_match<'d, 'i>(
        &mut self,
        doc: &'d Document<'i>,
        ctx: Node<'d, 'i>,
        prefix: usize,
        attr: &AttributePlan,
    ) -> Option<String> {
        for src in attr.sources.iter().filter(|s| s.prefix == prefix) {
            for node in self.select(doc, ctx, &src.rel.steps) {
                if let Some(v) = node_value(node, src.rel.attr.as_deref()) {
                    let v = attr.convert(v);
                    if !v.is_empty() {
                        return Some(v);
                    }
                }
            }
        }
        None
    }

    /// Top-level occurrences of the root entity, deduplicated, in xpath
    /// order and then document order.
    pub fn root_occurrences<'d, 'i>(&mut self, doc: &'d Document<'i>, plan: &EntityPlan) -> Vec<(Node<'d, 'i>, usize)> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (i, p) in plan.prefixes.iter().enumerate() {
            for n in select_absolute(doc, &p.steps) {
                if seen.insert(n.id()) {
                    out.push((n, i));
                }
            }
        }
        out
    }

    fn nested_occurrences<'d, 'i>(
        &mut self,
        doc: &'d Document<'i>,
        ctx: Node<'d, 'i>,
        parent_prefix: usize,
        plan: &EntityPlan,
    ) -> Vec<(Node<'d, 'i>, usize)> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (i, src) in plan.occurrence_sources.iter().enumerate() {
            if src.prefix != parent_prefix {
                continue;
            }
            for n in self.select(doc, ctx, &src.rel.steps) {
                if seen.insert(n.id()) {
                    out.push((n, i));
                }
            }
        }
        out
    }

    /// Build one instance at `ctx`. Returns it when fulfilled; its fulfilled
    /// descendants are appended to `out`. When it is not fulfilled, nothing
    /// is kept and the id it drew stays unused.
    pub fn process_entity<'d, 'i>(
        &mut self,
        doc: &'d Document<'i>,
        plan: &EntityPlan,
        ctx: Node<'d, 'i>,
        prefix: usize,
        out: &mut Vec<EntityInstance>,
    ) -> Option<EntityInstance> {
        let mut inst = EntityInstance::new(&plan.table, self.ids.next(&plan.table));
        let mut own = 0usize;
        for attr in &plan.attributes {
            if let Some(v) = self.first_match(doc, ctx, prefix, attr) {
                inst.attrs.insert(attr.column.clone(), v);
                own += 1;
            }
        }
        let mut descendants = Vec::new();
        for (link, child) in &plan.children {
            let occurrences = self.nested_occurrences(doc, ctx, prefix, child);
            match link {
                Link::ParentHolds { column } => {
                    for (node, p) in occurrences {
                        if let Some(mut c) = self.process_entity(doc, child, node, p, &mut descendants) {
                            c.parent_ref = Some((plan.table.clone(), inst.floating_id));
                            inst.attrs.insert(column.clone(), c.floating_id.to_string());
                            own += 1;
                            descendants.push(c);
                            break;
                        }
                    }
                }
                Link::ChildHolds { column } => {
                    for (node, p) in occurrences {
                        if let Some(mut c) = self.process_entity(doc, child, node, p, &mut descendants) {
                            c.parent_ref = Some((plan.table.clone(), inst.floating_id));
                            c.attrs.insert(column.clone(), inst.floating_id.to_string());
                            descendants.push(c);
                        }
                    }
                }
            }
        }
        if own == 0 {
            return None;
        }
        inst.fulfilled = true;
        out.extend(descendants);
        Some(inst)
    }

    /// Every fulfilled instance produced by one document.
    pub fn process_document(&mut self, doc: &Document<'_>, plan: &EntityPlan) -> Vec<EntityInstance> {
        if let Some(c) = self.cache.as_deref_mut() {
            c.start_document();
        }
        let mut out = Vec::new();
        for (node, prefix) in self.root_occurrences(doc, plan) {
            if let Some(inst) = self.process_entity(doc, plan, node, prefix, &mut out) {
                out.push(inst);
            }
        }
        out
    }
}

/// Per-entity FIFO queues of rows waiting for a batch insert.
#[derive(Debug, Default)]
pub struct EntityPool {
    queues: HashMap<String, Vec<EntityInstance>>,
    len: usize,
}

impl EntityPool {
    pub fn push(&mut self, inst: EntityInstance) {
        self.len += 1;
        self.queues.entry(inst.entity.clone()).or_default().push(inst);
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = EntityInstance>) {
        for i in items {
            self.push(i);
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Emit every queue as one batch, in dependency order, and empty the
    /// pool. On a sink error the rows written so far are reported with it.
    pub fn flush(
        &mut self,
        graph: &DependencyGraph,
        sink: &mut dyn Sink,
    ) -> Result<BTreeMap<String, u64>, (BTreeMap<String, u64>, io::Error)> {
        let mut emitted = BTreeMap::new();
        for name in &graph.order {
            let Some(rows) = self.queues.remove(name) else {
                continue;
            };
            if rows.is_empty() {
                continue;
            }
            self.len -= rows.len();
            if let Err(e) = sink.write_batch(&graph.tables[name], &rows) {
                return Err((emitted, e));
            }
            emitted.insert(name.clone(), rows.len() as u64);
        }
        debug_assert!(self.queues.values().all(Vec::is_empty));
        self.queues.clear();
        self.len = 0;
        Ok(emitted)
    }
}
