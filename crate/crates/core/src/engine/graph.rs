use std::collections::{BTreeSet, HashMap};

use indexmap::IndexMap;

use super::EngineError;
use crate::mapping::{link_for, Link, SchemaNode};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    /// Table whose `id` this column points to.
    pub references: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<Column>,
}

impl TableDef {
    fn add(&mut self, column: Column) -> Result<(), EngineError> {
        if column.name == "id" {
            return Err(EngineError::Config(format!("table {}: column name \"id\" is reserved", self.name)));
        }
        match self.columns.iter().find(|c| c.name == column.name) {
            Some(existing) if existing.references != column.references => Err(EngineError::Config(format!(
                "table {}: column {} used both as {:?} and {:?}",
                self.name, column.name, existing.references, column.references
            ))),
            Some(_) => Ok(()),
            None => {
                self.columns.push(column);
                Ok(())
            }
        }
    }
}

/// Entity tables and the foreign-key relation between them. `order` lists
/// referenced tables before the tables that reference them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    pub tables: IndexMap<String, TableDef>,
    /// `(a, b)`: table `a` holds a foreign key to table `b`.
    pub edges: BTreeSet<(String, String)>,
    pub order: Vec<String>,
}

impl DependencyGraph {
    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.get(name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.order.iter().position(|t| t == name)
    }
}

pub fn derive_dependency_graph(schema: &SchemaNode) -> Result<DependencyGraph, EngineError> {
    let mut tables: IndexMap<String, TableDef> = IndexMap::new();
    let mut edges = BTreeSet::new();
    collect(schema, &mut tables, &mut edges)?;
    let order = topo_order(&tables, &edges)?;
    Ok(DependencyGraph { tables, edges, order })
}

fn table<'a>(tables: &'a mut IndexMap<String, TableDef>, name: &str) -> &'a mut TableDef {
    tables.entry(name.to_string()).or_insert_with(|| TableDef {
        name: name.to_string(),
        columns: Vec::new(),
    })
}

fn collect(
    entity: &SchemaNode,
    tables: &mut IndexMap<String, TableDef>,
    edges: &mut BTreeSet<(String, String)>,
) -> Result<(), EngineError> {
    table(tables, &entity.db);
    for child in &entity.nodes {
        if !child.is_entity() {
            table(tables, &entity.db).add(Column { name: child.db.clone(), references: None })?;
            continue;
        }
        table(tables, &child.db);
        match link_for(entity, child) {
            Link::ParentHolds { column } => {
                table(tables, &entity.db).add(Column { name: column, references: Some(child.db.clone()) })?;
                edges.insert((entity.db.clone(), child.db.clone()));
            }
            Link::ChildHolds { column } => {
                table(tables, &child.db).add(Column { name: column, references: Some(entity.db.clone()) })?;
                edges.insert((child.db.clone(), entity.db.clone()));
            }
        }
        collect(child, tables, edges)?;
    }
    Ok(())
}

/// Kahn's algorithm; among ready tables the one declared first wins.
fn topo_order(tables: &IndexMap<String, TableDef>, edges: &BTreeSet<(String, String)>) -> Result<Vec<String>, EngineError> {
    // a table is ready once every table it references has been placed
    let mut pending: HashMap<&str, usize> = tables.keys().map(|t| (t.as_str(), 0)).collect();
    for (a, _) in edges {
        *pending.get_mut(a.as_str()).expect("edge endpoint is a table") += 1;
    }
    let mut order = Vec::with_capacity(tables.len());
    let mut placed = vec![false; tables.len()];
    while let Some(i) = tables.keys().enumerate().position(|(i, t)| !placed[i] && pending[t.as_str()] == 0) {
        placed[i] = true;
        let name = tables.get_index(i).expect("index in range").0;
        order.push(name.clone());
        for (a, b) in edges {
            if b == name {
                *pending.get_mut(a.as_str()).expect("table") -= 1;
            }
        }
    }
    if order.len() < tables.len() {
        return Err(EngineError::Config(format!("foreign keys form a cycle: {}", find_cycle(edges, &order))));
    }
    Ok(order)
}

fn find_cycle(edges: &BTreeSet<(String, String)>, placed: &[String]) -> String {
    let rest: Vec<&(String, String)> = edges.iter().filter(|(a, b)| !placed.contains(a) && !placed.contains(b)).collect();
    let Some(start) = rest.first().map(|(a, _)| a.clone()) else {
        return String::from("?");
    };
    let mut path = vec![start];
    loop {
        let cur = path.last().expect("non-empty");
        let Some((_, next)) = rest.iter().find(|(a, _)| a == cur) else {
            return path.join(" -> ");
        };
        if let Some(i) = path.iter().position(|p| p == next) {
            let mut cycle = path[i..].to_vec();
            cycle.push(next.clone());
            return cycle.join(" -> ");
        }
        path.push(next.clone());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::load_schema;

    /// Oracle: an order is valid when every referenced table precedes the
    /// table holding the reference.
    fn respects(g: &DependencyGraph) -> bool {
        g.edges.iter().all(|(a, b)| g.position(b) < g.position(a))
    }

    #[test]
    fn foreign_key_child_first() {
        let s = load_schema(br#"{"db":"Entity1","type":"Model","nodes":[{"db":"a","type":"TextField"},
            {"db":"Entity2","type":"ForeignKey","nodes":[{"db":"b","type":"TextField"}]}]}"#)
        .unwrap();
        let g = derive_dependency_graph(&s).unwrap();
        assert_eq!(g.order, ["Entity2", "Entity1"]);
        assert!(respects(&g));
        let cols: Vec<&str> = g.tables["Entity1"].columns.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(cols, ["a", "Entity2"]);
    }

    #[test]
    fn single_and_chain() {
        let s = load_schema(br#"{"db":"E","type":"Model"}"#).unwrap();
        assert_eq!(derive_dependency_graph(&s).unwrap().order, ["E"]);
        let s = load_schema(br#"{"db":"A","type":"Model","nodes":[{"db":"B","type":"ForeignKey","nodes":[{"db":"C","type":"ForeignKey","nodes":[]}]}]}"#).unwrap();
        let g = derive_dependency_graph(&s).unwrap();
        assert_eq!(g.order, ["C", "B", "A"]);
        assert!(respects(&g));
    }

    #[test]
    fn repetitive_child_points_to_parent() {
        let s = load_schema(br#"{"db":"document","type":"Model","nodes":[{"db":"childEntity","type":"Model","repetitive":true,"nodes":[{"db":"x","type":"TextField"}]}]}"#).unwrap();
        let g = derive_dependency_graph(&s).unwrap();
        assert_eq!(g.order, ["document", "childEntity"]);
        assert_eq!(g.tables["childEntity"].columns[0], Column { name: "document_id".into(), references: Some("document".into()) });
    }

    #[test]
    fn cycle_is_named() {
        // B appears twice: once under A (A holds B) and once holding A's reference
        let s = load_schema(br#"{"db":"A","type":"Model","nodes":[
            {"db":"B","type":"ForeignKey","nodes":[{"db":"A","type":"ForeignKey","nodes":[]}]}]}"#)
        .unwrap();
        let err = derive_dependency_graph(&s).unwrap_err().to_string();
        assert!(err.contains("A -> B -> A") || err.contains("B -> A -> B"), "{err}");
    }
}
