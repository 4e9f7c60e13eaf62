//! A mapping file resolved against its schema: every xpath parsed and
//! expressed relative to the entity occurrence it is evaluated under.

use indexmap::IndexMap;

use super::file::{MappingFile, MappingNode};
use super::schema::SchemaNode;
use super::MappingError;
use crate::xpath::{RelPath, XPath};

/// How a nested entity is tied to the entity that contains it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Link {
    /// Single occurrence: the parent row stores the child's id in `column`.
    ParentHolds { column: String },
    /// Repeated occurrences: every child row stores the parent's id in `column`.
    ChildHolds { column: String },
}

pub fn link_for(parent: &SchemaNode, child: &SchemaNode) -> Link {
    if child.repetitive {
        Link::ChildHolds { column: format!("{}_id", parent.db) }
    } else {
        Link::ParentHolds { column: child.db.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Source {
    /// Index into the owning entity's prefixes.
    pub prefix: usize,
    pub rel: RelPath,
    pub xpath: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributePlan {
    pub column: String,
    pub sources: Vec<Source>,
    pub conversion: IndexMap<String, String>,
}

impl AttributePlan {
    pub fn convert(&self, value: String) -> String {
        match self.conversion.get(&value) {
            Some(to) => to.clone(),
            None => value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityPlan {
    pub schema_path: String,
    pub table: String,
    pub repetitive: bool,
    pub prefixes: Vec<XPath>,
    /// For nested entities, one source per prefix locating occurrences under
    /// the parent's context (`Source::prefix` indexes the parent's prefixes).
    pub occurrence_sources: Vec<Source>,
    pub attributes: Vec<AttributePlan>,
    pub children: Vec<(Link, EntityPlan)>,
}

impl EntityPlan {
    pub fn walk(&self) -> Vec<&EntityPlan> {
        let mut out = vec![self];
        for (_, c) in &self.children {
            out.extend(c.walk());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingPlan {
    pub mapping: MappingFile,
    pub root: Option<EntityPlan>,
}

/// Longest prefix (by step count) that `xpath` extends.
fn best_prefix(xpath: &XPath, prefixes: &[XPath]) -> Option<(usize, RelPath)> {
    prefixes
        .iter()
        .enumerate()
        .filter_map(|(i, p)| xpath.relative_to(p).map(|r| (i, r, p.steps.len())))
        .max_by(|a, b| a.2.cmp(&b.2).then(b.0.cmp(&a.0)))
        .map(|(i, r, _)| (i, r))
}

/// Check a mapping against its schema and the evaluation rules, collecting
/// every offending path before failing.
pub fn compile(mapping: &MappingFile, schema: &SchemaNode) -> Result<MappingPlan, MappingError> {
    let mut problems = Vec::new();
    let mut root = None;
    for (name, node) in &mapping.roots {
        if *name != schema.db {
            problems.push(format!("{name}: not the schema root {:?}", schema.db));
            continue;
        }
        root = compile_entity(node, schema, name, None, &mut problems);
    }
    if problems.is_empty() {
        Ok(MappingPlan { mapping: mapping.clone(), root })
    } else {
        Err(MappingError::Invalid(problems))
    }
}

fn parse_xpaths(node: &MappingNode, path: &str, problems: &mut Vec<String>) -> Vec<XPath> {
    node.xpaths
        .iter()
        .filter_map(|x| match XPath::parse(x) {
            Ok(p) => Some(p),
            Err(e) => {
                problems.push(format!("{path}: {e}"));
                None
            }
        })
        .collect()
}

fn compile_entity(
    node: &MappingNode,
    schema: &SchemaNode,
    path: &str,
    parent_prefixes: Option<&[XPath]>,
    problems: &mut Vec<String>,
) -> Option<EntityPlan> {
    let before = problems.len();
    if node.xpaths.is_empty() {
        problems.push(format!("{path}: entity has no {}", super::file::XPATH_KEY));
    }
    if !node.conversion.is_empty() {
        problems.push(format!("{path}: conversions apply to attributes only"));
    }
    let prefixes = parse_xpaths(node, path, problems);
    let mut occurrence_sources = Vec::new();
    for p in &prefixes {
        if p.is_attribute() {
            problems.push(format!("{path}: entity xpath {p} selects an attribute"));
            continue;
        }
        if let Some(parents) = parent_prefixes {
            match best_prefix(p, parents) {
                Some((prefix, rel)) => occurrence_sources.push(Source { prefix, rel, xpath: p.to_string() }),
                None => problems.push(format!("{path}: {p} does not extend any parent entity xpath")),
            }
        }
    }

    let mut attributes = Vec::new();
    let mut children = Vec::new();
    for (name, child) in &node.children {
        let child_path = format!("{path}.{name}");
        let Some(child_schema) = schema.child(name) else {
            problems.push(format!("{child_path}: not in schema"));
            continue;
        };
        if child_schema.is_entity() {
            if let Some(plan) = compile_entity(child, child_schema, &child_path, Some(&prefixes), problems) {
                children.push((link_for(schema, child_schema), plan));
            }
            continue;
        }
        if !child.children.is_empty() {
            let names: Vec<&str> = child.children.keys().map(String::as_str).collect();
            problems.push(format!("{child_path}: attribute has nested entries {names:?}"));
        }
        let mut sources = Vec::new();
        for x in parse_xpaths(child, &child_path, problems) {
            match best_prefix(&x, &prefixes) {
                Some((prefix, rel)) => sources.push(Source { prefix, rel, xpath: x.to_string() }),
                None => problems.push(format!("{child_path}: {x} does not extend any xpath of entity {path}")),
            }
        }
        attributes.push(AttributePlan {
            column: child_schema.db.clone(),
            sources,
            conversion: child.conversion.clone(),
        });
    }
    // keep schema order for attributes so columns are stable
    attributes.sort_by_key(|a| schema.nodes.iter().position(|n| n.db == a.column));
    children.sort_by_key(|(_, c)| schema.nodes.iter().position(|n| n.db == c.table));

    (problems.len() == before).then(|| EntityPlan {
        schema_path: path.to_string(),
        table: schema.db.clone(),
        repetitive: schema.repetitive,
        prefixes,
        occurrence_sources,
        attributes,
        children,
    })
}
