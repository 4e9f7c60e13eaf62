//! Row sinks. Every sink receives whole per-table batches in dependency
//! order; it never needs to reorder.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::graph::{DependencyGraph, TableDef};
use super::EntityInstance;

pub trait Sink: Send {
    fn write_batch(&mut self, table: &TableDef, rows: &[EntityInstance]) -> io::Result<()>;

    fn finish(&mut self) -> io::Result<()> {
        Ok(())
    }
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn quote_text(value: &str) -> String {
    format!("'{}'", value.replace('\'', "''"))
}

/// Maximum rows per INSERT statement; larger batches are split.
pub const SQL_ROWS_PER_STATEMENT: usize = 500;

/// A single SQL script: `CREATE TABLE` statements in dependency order,
/// followed by multi-row `INSERT` statements as batches arrive.
pub struct SqlSink<W: Write + Send> {
    out: W,
}

impl<W: Write + Send> SqlSink<W> {
    pub fn new(mut out: W, graph: &DependencyGraph) -> io::Result<Self> {
        for name in &graph.order {
            let table = &graph.tables[name];
            let mut cols = vec![format!("{} INTEGER PRIMARY KEY", quote_ident("id"))];
            for c in &table.columns {
                cols.push(match &c.references {
                    Some(t) => format!("{} INTEGER REFERENCES {}({})", quote_ident(&c.name), quote_ident(t), quote_ident("id")),
                    None => format!("{} TEXT", quote_ident(&c.name)),
                });
            }
            writeln!(out, "CREATE TABLE {} ({});", quote_ident(name), cols.join(", "))?;
        }
        Ok(Self { out })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write + Send> Sink for SqlSink<W> {
    fn write_batch(&mut self, table: &TableDef, rows: &[EntityInstance]) -> io::Result<()> {
        let mut header = vec![quote_ident("id")];
        header.extend(table.columns.iter().map(|c| quote_ident(&c.name)));
        for chunk in rows.chunks(SQL_ROWS_PER_STATEMENT) {
            write!(self.out, "INSERT INTO {} ({}) VALUES", quote_ident(&table.name), header.join(", "))?;
            for (i, row) in chunk.iter().enumerate() {
                let mut vals = vec![row.floating_id.to_string()];
                for c in &table.columns {
                    vals.push(match (row.attrs.get(&c.name), &c.references) {
                        (None, _) => "NULL".to_string(),
                        (Some(v), Some(_)) => v.clone(),
                        (Some(v), None) => quote_text(v),
                    });
                }
                let sep = if i == 0 { " " } else { ", " };
                write!(self.out, "{sep}({})", vals.join(", "))?;
            }
            writeln!(self.out, ";")?;
        }
        Ok(())
    }

    fn finish(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Escape a value for a tab-separated cell. `NULL` is written as `\N`.
pub fn tsv_escape(value: Option<&str>) -> String {
    let Some(v) = value else {
        return "\\N".to_string();
    };
    let mut out = String::with_capacity(v.len());
    for c in v.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

/// One `<table>.tsv` file per entity with a header row.
pub struct TsvSink {
    dir: PathBuf,
    files: HashMap<String, BufWriter<File>>,
}

impl TsvSink {
    pub fn new(dir: impl AsRef<Path>, graph: &DependencyGraph) -> io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut files = HashMap::new();
        for name in &graph.order {
            let table = &graph.tables[name];
            let mut f = BufWriter::new(File::create(dir.join(format!("{name}.tsv")))?);
            let mut header = vec!["id".to_string()];
            header.extend(table.columns.iter().map(|c| tsv_escape(Some(&c.name))));
            writeln!(f, "{}", header.join("\t"))?;
            files.insert(name.clone(), f);
        }
        Ok(Self { dir, files })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl Sink for TsvSink {
    fn write_batch(&mut self, table: &TableDef, rows: &[EntityInstance]) -> io::Result<()> {
        let f = self
            .files
            .get_mut(&table.name)
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("no TSV file for table {}", table.name)))?;
        for row in rows {
            let mut cells = vec![row.floating_id.to_string()];
            cells.extend(table.columns.iter().map(|c| tsv_escape(row.attrs.get(&c.name).map(String::as_str))));
            writeln!(f, "{}", cells.join("\t"))?;
        }
        Ok(())
    }

    fn finish(&mut self) -> io::Result<()> {
        for f in self.files.values_mut() {
            f.flush()?;
        }
        Ok(())
    }
}

/// Keeps every batch in memory; used for previews and tests.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub batches: Vec<(String, Vec<EntityInstance>)>,
}

impl MemorySink {
    pub fn rows(&self, table: &str) -> Vec<&EntityInstance> {
        self.batches.iter().filter(|(t, _)| t == table).flat_map(|(_, r)| r).collect()
    }
}

impl Sink for MemorySink {
    fn write_batch(&mut self, table: &TableDef, rows: &[EntityInstance]) -> io::Result<()> {
        self.batches.push((table.name.clone(), rows.to_vec()));
        Ok(())
    }
}
