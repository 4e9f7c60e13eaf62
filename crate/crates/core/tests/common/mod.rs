//! Fixtures shared by integration tests and the acceptance runner: a seeded
//! synthetic notice corpus with an independent expectation of which rows the
//! mapping must produce, a tee sink, canonical row forms and SQL replay.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io;

use kex::engine::{
    derive_dependency_graph, run_batch, DependencyGraph, EngineConfig, EntityInstance, MemorySink, NamedDoc,
    RunReport, Sink, SqlSink, TableDef,
};
use kex::mapping::{import_plan, load_schema, MappingPlan, SchemaNode};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const SAMPLE_DOCS: &str = r#"<xml>
	<document>
		<attr1 name="document1">document 1</attr1>
	</document>
	<document>
		<attr1 name="document2"/>
		<attrBoolean>NO</attrBoolean>
		<child>
			<attr1>Child attribute</attr1>
		</child>
	</document>
	<document>
		<attr1>document 3</attr1>
	</document>
</xml>"#;

pub const SAMPLE_SCHEMA: &str = r#"{"db":"document","type":"Model","repetitive":"true","text":"Document","nodes":[
    {"db":"attribute1","type":"TextField","text":"Attribute 1"},
    {"db":"attribute2","type":"NullBooleanField","text":"Attribute 2"},
    {"db":"childEntity","type":"Model","repetitive":"true","text":"Child","nodes":[
        {"db":"attribute1","type":"TextField","text":"Child attribute 1"}]}]}"#;

pub const SAMPLE_MAPPING: &str = r#"{
  "version": "2015.11.17.01",
  "document": {
    "attribute1": {"__xpath__": ["/document/attr1", "/document/attr1/@name"]},
    "attribute2": {"__xpath__": ["/document/attrBoolean"], "__conversion__": {"NO": "false"}},
    "childEntity": {
      "attribute1": {"__xpath__": ["/document/child/attr1"]},
      "__xpath__": ["/document/child"]
    },
    "__xpath__": ["/document"]
  }
}"#;

pub const NOTICE_SCHEMA: &str = r#"{"db":"notice","type":"Model","repetitive":"true","text":"Notice","nodes":[
    {"db":"title","type":"TextField","text":"Title"},
    {"db":"published","type":"DateTimeField","text":"Publication date"},
    {"db":"framework","type":"NullBooleanField","text":"Framework agreement"},
    {"db":"authority","type":"ForeignKey","text":"Contracting authority","nodes":[
        {"db":"name","type":"TextField","text":"Name"},
        {"db":"country","type":"TextField","text":"Country"}]},
    {"db":"lot","type":"Model","repetitive":"true","text":"Lot","nodes":[
        {"db":"number","type":"TextField","text":"Lot number"},
        {"db":"description","type":"TextField","text":"Description"},
        {"db":"cpv","type":"Model","repetitive":"true","text":"CPV code","nodes":[
            {"db":"code","type":"TextField","text":"Code"}]}]}]}"#;

pub const NOTICE_MAPPING: &str = r#"{
  "version": "2016.03.01.01",
  "notice": {
    "__xpath__": ["/notice"],
    "title": {"__xpath__": ["/notice/title", "/notice/title/@text"]},
    "published": {"__xpath__": ["/notice/date"]},
    "framework": {"__xpath__": ["/notice/framework"], "__conversion__": {"NO": "false", "YES": "true"}},
    "authority": {
      "__xpath__": ["/notice/authority"],
      "name": {"__xpath__": ["/notice/authority/name"]},
      "country": {"__xpath__": ["/notice/authority/@country"]}
    },
    "lot": {
      "__xpath__": ["/notice/lots/lot"],
      "number": {"__xpath__": ["/notice/lots/lot/@n"]},
      "description": {"__xpath__": ["/notice/lots/lot/desc"]},
      "cpv": {"__xpath__": ["/notice/lots/lot/cpv"], "code": {"__xpath__": ["/notice/lots/lot/cpv/code"]}}
    }
  }
}"#;

pub fn notice_setup() -> (SchemaNode, MappingPlan, DependencyGraph) {
    let schema = load_schema(NOTICE_SCHEMA.as_bytes()).unwrap();
    let plan = import_plan(NOTICE_MAPPING.as_bytes(), &schema).unwrap();
    let graph = derive_dependency_graph(&schema).unwrap();
    (schema, plan, graph)
}

pub fn sample_setup() -> (SchemaNode, MappingPlan, DependencyGraph) {
    let schema = load_schema(SAMPLE_SCHEMA.as_bytes()).unwrap();
    let plan = import_plan(SAMPLE_MAPPING.as_bytes(), &schema).unwrap();
    let graph = derive_dependency_graph(&schema).unwrap();
    (schema, plan, graph)
}

const WORDS: &[&str] = &["coal", "supply", "road", "repair", "school", "meals", "IT", "services", "fuel", "cleaning"];
const NAMES: &[&str] = &["City of Aarhus", "Ministry of Health", "Port Authority", "Region Midt"];
const COUNTRIES: &[&str] = &["DK", "PL", "UK"];

/// A synthetic corpus plus the row counts the mapping must yield, computed
/// from the generator's own choices rather than by the engine.
pub struct Corpus {
    pub docs: Vec<NamedDoc>,
    pub expected_rows: BTreeMap<String, u64>,
}

fn phrase(rng: &mut StdRng) -> String {
    let n = rng.gen_range(1..=3);
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

pub fn notice_corpus(n_docs: usize, seed: u64) -> Corpus {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut expected: BTreeMap<String, u64> = ["notice", "authority", "lot", "cpv"].iter().map(|t| (t.to_string(), 0)).collect();
    let mut docs = Vec::with_capacity(n_docs);
    for d in 0..n_docs {
        let mut xml = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<notices>\n");
        for _ in 0..rng.gen_range(1..=3) {
            let mut body = String::new();
            let mut own = false;
            match rng.gen_range(0..4) {
                0 => {}
                1 => {
                    body.push_str(&format!("  <title text=\"{}\"/>\n", phrase(&mut rng)));
                    own = true;
                }
                _ => {
                    body.push_str(&format!("  <title>{}</title>\n", phrase(&mut rng)));
                    own = true;
                }
            }
            if rng.gen_bool(0.5) {
                body.push_str(&format!("  <date>2016-0{}-1{}</date>\n", rng.gen_range(1..10), rng.gen_range(0..10)));
                own = true;
            }
            if rng.gen_bool(0.4) {
                body.push_str(&format!("  <framework>{}</framework>\n", if rng.gen_bool(0.5) { "YES" } else { "NO" }));
                own = true;
            }
            let mut authority = false;
            match rng.gen_range(0..4) {
                0 => {}
                1 => body.push_str("  <authority/>\n"),
                _ => {
                    let name = rng.gen_bool(0.8);
                    let country = rng.gen_bool(0.5);
                    body.push_str("  <authority");
                    if country {
                        body.push_str(&format!(" country=\"{}\"", COUNTRIES[rng.gen_range(0..COUNTRIES.len())]));
                    }
                    body.push('>');
                    if name {
                        body.push_str(&format!("<name>{}</name>", NAMES[rng.gen_range(0..NAMES.len())]));
                    }
                    body.push_str("</authority>\n");
                    authority = name || country;
                }
            }
            let mut lots = 0u64;
            let mut cpvs = 0u64;
            let n_lots = rng.gen_range(0..4);
            if n_lots > 0 {
                body.push_str("  <lots>\n");
                for i in 0..n_lots {
                    let numbered = rng.gen_bool(0.6);
                    let described = rng.gen_bool(0.5);
                    body.push_str("    <lot");
                    if numbered {
                        body.push_str(&format!(" n=\"{}\"", i + 1));
                    }
                    body.push('>');
                    if described {
                        body.push_str(&format!("<desc>{}</desc>", phrase(&mut rng)));
                    }
                    let mut lot_cpvs = 0;
                    for _ in 0..rng.gen_range(0..3) {
                        if rng.gen_bool(0.8) {
                            body.push_str(&format!("<cpv><code>{:09}</code></cpv>", rng.gen_range(1_000_000..99_999_999u64)));
                            lot_cpvs += 1;
                        } else {
                            body.push_str("<cpv><code> </code></cpv>");
                        }
                    }
                    body.push_str("</lot>\n");
                    if numbered || described {
                        lots += 1;
                        cpvs += lot_cpvs;
                    }
                }
                body.push_str("  </lots>\n");
            }
            xml.push_str(&format!(" <notice>\n{body} </notice>\n"));
            if own || authority {
                *expected.get_mut("notice").unwrap() += 1;
                *expected.get_mut("authority").unwrap() += authority as u64;
                *expected.get_mut("lot").unwrap() += lots;
                *expected.get_mut("cpv").unwrap() += cpvs;
            }
        }
        xml.push_str("</notices>\n");
        docs.push(NamedDoc { name: format!("notice_{d:04}.xml"), bytes: xml.into_bytes() });
    }
    Corpus { docs, expected_rows: expected }
}

/// Feeds every batch to two sinks.
pub struct Tee<A, B>(pub A, pub B);

impl<A: Sink, B: Sink> Sink for Tee<A, B> {
    fn write_batch(&mut self, table: &TableDef, rows: &[EntityInstance]) -> io::Result<()> {
        self.0.write_batch(table, rows)?;
        self.1.write_batch(table, rows)
    }

    fn finish(&mut self) -> io::Result<()> {
        self.0.finish()?;
        self.1.finish()
    }
}

pub struct RunOutput {
    pub report: RunReport,
    pub memory: MemorySink,
    pub sql: String,
}

pub fn run_docs(docs: &[NamedDoc], plan: &MappingPlan, graph: &DependencyGraph, config: &EngineConfig) -> RunOutput {
    let sql = SqlSink::new(Vec::new(), graph).unwrap();
    let mut tee = Tee(MemorySink::default(), sql);
    let report = run_batch(docs, |d| d.name.clone(), |d| Ok(vec![d.clone()]), plan, graph, &mut tee, config).unwrap();
    let Tee(memory, sql) = tee;
    RunOutput { report, memory, sql: String::from_utf8(sql.into_inner()).unwrap() }
}

/// Id-free form of every row: its own values plus, for each foreign key, the
/// canonical form of the row it points to. Two runs that differ only in id
/// assignment give equal results.
pub fn canonical_rows(sink: &MemorySink, graph: &DependencyGraph) -> BTreeMap<String, Vec<String>> {
    let mut by_id: BTreeMap<(String, u64), &EntityInstance> = BTreeMap::new();
    for (t, rows) in &sink.batches {
        for r in rows {
            assert!(by_id.insert((t.clone(), r.floating_id), r).is_none(), "duplicate id {t}#{}", r.floating_id);
        }
    }
    fn canon(
        table: &str,
        row: &EntityInstance,
        graph: &DependencyGraph,
        by_id: &BTreeMap<(String, u64), &EntityInstance>,
    ) -> String {
        let mut parts = Vec::new();
        for c in &graph.tables[table].columns {
            let v = row.attrs.get(&c.name);
            let rendered = match (&c.references, v) {
                (_, None) => "NULL".to_string(),
                (None, Some(v)) => format!("{v:?}"),
                (Some(t), Some(id)) => {
                    let target = by_id[&(t.clone(), id.parse::<u64>().unwrap())];
                    format!("{t}({})", canon(t, target, graph, by_id))
                }
            };
            parts.push(format!("{}={rendered}", c.name));
        }
        parts.join(",")
    }
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for ((t, _), r) in &by_id {
        out.entry(t.clone()).or_default().push(canon(t, r, graph, &by_id));
    }
    for v in out.values_mut() {
        v.sort();
    }
    out
}

/// Load SQL output into SQLite with foreign keys enforced and return the
/// number of rows per table.
pub fn replay_sql(sql: &str) -> Result<BTreeMap<String, u64>, String> {
    let conn = rusqlite::Connection::open_in_memory().map_err(|e| e.to_string())?;
    conn.execute_batch("PRAGMA foreign_keys = ON;").map_err(|e| e.to_string())?;
    conn.execute_batch(sql).map_err(|e| format!("replay failed: {e}"))?;
    let violations: i64 = conn
        .query_row("SELECT count(*) FROM pragma_foreign_key_check", [], |r| r.get(0))
        .map_err(|e| e.to_string())?;
    if violations > 0 {
        return Err(format!("{violations} foreign key violations"));
    }
    let mut stmt = conn.prepare("SELECT name FROM sqlite_master WHERE type = 'table'").map_err(|e| e.to_string())?;
    let tables: Vec<String> = stmt
        .query_map([], |r| r.get(0))
        .map_err(|e| e.to_string())?
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mut counts = BTreeMap::new();
    for t in tables {
        let n: i64 = conn
            .query_row(&format!("SELECT count(*) FROM \"{t}\""), [], |r| r.get(0))
            .map_err(|e| e.to_string())?;
        counts.insert(t, n as u64);
    }
    Ok(counts)
}
