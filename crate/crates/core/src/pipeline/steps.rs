//! Built-in pipeline steps.

use std::fs;
use std::io::{Cursor, Read};
use std::sync::Arc;

use quick_xml::events::{BytesEnd, BytesStart, Event};
use regex::Regex;

use super::{Artifact, Step, StepContext, StepRegistry};
use crate::dictionary::Dictionary;
use crate::structure::{analyze, ExtractionConfig, XmlOptions};
use crate::xmlutil::{escape_text, sanitize_name, XML_DECL};

pub(super) const GET_FILE: &str = "getFile";

pub(super) fn register_builtins(r: &mut StepRegistry) {
    r.register(GET_FILE, |p| {
        p.reject_unknown(&[])?;
        Ok(Arc::new(GetFile) as Arc<dyn Step>)
    });
    r.register("removeFile", |p| {
        p.reject_unknown(&[])?;
        Ok(Arc::new(RemoveFile) as Arc<dyn Step>)
    });
    r.register("uncompress", |p| {
        p.reject_unknown(&["format"])?;
        let format = match p.str("format")?.unwrap_or("auto") {
            "auto" => Compression::Auto,
            "gzip" => Compression::Gzip,
            "zip" => Compression::Zip,
            "tar" => Compression::Tar,
            other => return Err(format!("unsupported format {other:?}, expected auto|gzip|zip|tar")),
        };
        Ok(Arc::new(Uncompress { format }) as Arc<dyn Step>)
    });
    r.register("reencode", |p| {
        p.reject_unknown(&["from"])?;
        let from = p.str("from")?.map(str::to_string);
        if let Some(label) = &from {
            if encoding_rs::Encoding::for_label(label.as_bytes()).is_none() {
                return Err(format!("unknown charset {label:?}"));
            }
        }
        Ok(Arc::new(Reencode { from }) as Arc<dyn Step>)
    });
    r.register("csvToXml", |p| {
        p.reject_unknown(&["headerRow", "delimiter"])?;
        let delimiter = match p.str("delimiter")? {
            None => b',',
            Some(d) if d.len() == 1 => d.as_bytes()[0],
            Some("\\t") => b'\t',
            Some(d) => return Err(format!("delimiter must be one ASCII character, got {d:?}")),
        };
        Ok(Arc::new(CsvToXml(CsvOptions { header_row: p.bool("headerRow", true)?, delimiter })) as Arc<dyn Step>)
    });
    r.register("htmlToXml", |p| {
        p.reject_unknown(&["dictionary", "config", "hierarchical", "root"])?;
        let path = p.path("dictionary")?.ok_or("parameter dictionary is required")?;
        let dict = Dictionary::load(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let config: ExtractionConfig = match p.params.get("config") {
            None => ExtractionConfig::default(),
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| format!("config: {e}"))?,
        };
        config.validate().map_err(|e| e.to_string())?;
        let mut xml = XmlOptions { hierarchical: p.bool("hierarchical", false)?, ..Default::default() };
        if let Some(root) = p.str("root")? {
            xml.root = root.to_string();
        }
        Ok(Arc::new(HtmlToXml { dict, config, xml }) as Arc<dyn Step>)
    });
    r.register("rewriteRepetitive", |p| {
        p.reject_unknown(&["pattern", "name"])?;
        let pattern = p.str("pattern")?.ok_or("parameter pattern is required")?;
        let rp = RepetitivePattern::new(pattern, p.str("name")?)?;
        Ok(Arc::new(RewriteRepetitive(rp)) as Arc<dyn Step>)
    });
}

fn io_err(e: std::io::Error) -> String {
    e.to_string()
}

fn read(a: &Artifact) -> Result<Vec<u8>, String> {
    fs::read(&a.path).map_err(|e| format!("{}: {e}", a.path.display()))
}

/// Write `bytes` to a new artifact in the work directory.
fn emit(ctx: &StepContext<'_>, name: &str, bytes: &[u8], charset: Option<String>) -> Result<Artifact, String> {
    let path = ctx.new_path(name);
    fs::write(&path, bytes).map_err(io_err)?;
    Ok(Artifact { name: name.to_string(), path, charset })
}

/// Copies the record payload into the work directory.
pub(super) struct GetFile;

impl Step for GetFile {
    fn name(&self) -> &str {
        GET_FILE
    }

    fn run(&self, ctx: &StepContext<'_>, mut input: Vec<Artifact>) -> Result<Vec<Artifact>, String> {
        let (_, bytes) = ctx.store.get(&ctx.record.id).map_err(|e| e.to_string())?;
        let path = ctx.new_path("payload");
        fs::write(&path, bytes).map_err(io_err)?;
        input.push(Artifact { name: "payload".into(), path, charset: ctx.record.charset() });
        Ok(input)
    }
}

/// Deletes the run's work directory with every intermediate in it.
pub(super) struct RemoveFile;

impl Step for RemoveFile {
    fn name(&self) -> &str {
        "removeFile"
    }

    fn run(&self, ctx: &StepContext<'_>, _input: Vec<Artifact>) -> Result<Vec<Artifact>, String> {
        match fs::remove_dir_all(ctx.work_dir) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(io_err(e)),
            _ => Ok(Vec::new()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Compression {
    Auto,
    Gzip,
    Zip,
    Tar,
}

fn sniff(bytes: &[u8]) -> Option<Compression> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        Some(Compression::Gzip)
    } else if bytes.starts_with(b"PK\x03\x04") || bytes.starts_with(b"PK\x05\x06") {
        Some(Compression::Zip)
    } else if bytes.len() >= 262 && &bytes[257..262] == b"ustar" {
        Some(Compression::Tar)
    } else {
        None
    }
}

fn expand(format: Compression, name: &str, bytes: &[u8]) -> Result<Vec<(String, Vec<u8>)>, String> {
    match format {
        Compression::Auto => unreachable!("resolved by the caller"),
        Compression::Gzip => {
            let mut out = Vec::new();
            flate2::read::MultiGzDecoder::new(bytes)
                .read_to_end(&mut out)
                .map_err(|e| format!("gzip: {e}"))?;
            let inner = name.strip_suffix(".gz").unwrap_or(name).to_string();
            Ok(vec![(inner, out)])
        }
        Compression::Zip => {
            let mut archive = zip::ZipArchive::new(Cursor::new(bytes)).map_err(|e| format!("zip: {e}"))?;
            let mut out = Vec::new();
            for i in 0..archive.len() {
                let mut f = archive.by_index(i).map_err(|e| format!("zip: {e}"))?;
                if f.is_dir() {
                    continue;
                }
                let mut buf = Vec::new();
                f.read_to_end(&mut buf).map_err(|e| format!("zip member {}: {e}", f.name()))?;
                out.push((f.name().to_string(), buf));
            }
            Ok(out)
        }
        Compression::Tar => {
            let mut archive = tar::Archive::new(bytes);
            let mut out = Vec::new();
            for entry in archive.entries().map_err(|e| format!("tar: {e}"))? {
                let mut entry = entry.map_err(|e| format!("tar: {e}"))?;
                if !entry.header().entry_type().is_file() {
                    continue;
                }
                let member = entry.path().map_err(|e| format!("tar: {e}"))?.to_string_lossy().into_owned();
                let mut buf = Vec::new();
                entry.read_to_end(&mut buf).map_err(|e| format!("tar member {member}: {e}"))?;
                out.push((member, buf));
            }
            Ok(out)
        }
    }
}

/// Expands gzip, zip or tar artifacts. `auto` sniffs magic bytes and keeps
/// expanding nested containers (e.g. `.tar.gz`); unrecognized input passes
/// through unchanged.
struct Uncompress {
    format: Compression,
}

impl Step for Uncompress {
    fn name(&self) -> &str {
        "uncompress"
    }

    fn run(&self, ctx: &StepContext<'_>, input: Vec<Artifact>) -> Result<Vec<Artifact>, String> {
        let mut out = Vec::new();
        for a in input {
            let bytes = read(&a)?;
            let mut pending = vec![(a.name.clone(), bytes)];
            let mut rounds = 0;
            loop {
                let mut next = Vec::new();
                let mut expanded = false;
                for (name, bytes) in pending {
                    let format = match self.format {
                        Compression::Auto if rounds < 4 => sniff(&bytes),
                        Compression::Auto => None,
                        f if rounds == 0 => Some(f),
                        _ => None,
                    };
                    match format {
                        Some(f) => {
                            next.extend(expand(f, &name, &bytes)?);
                            expanded = true;
                        }
                        None => next.push((name, bytes)),
                    }
                }
                pending = next;
                rounds += 1;
                if !expanded || self.format != Compression::Auto {
                    break;
                }
            }
            for (name, bytes) in pending {
                out.push(emit(ctx, &name, &bytes, a.charset.clone())?);
            }
        }
        Ok(out)
    }
}

/// The `encoding` pseudo-attribute of a leading XML declaration.
pub(super) fn declared_encoding(text: &str) -> Option<String> {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r#"^\s*<\?xml[^>]*?encoding\s*=\s*["']([^"']+)["']"#).expect("valid regex"));
    re.captures(text).map(|c| c[1].to_string())
}

/// Decode `bytes` choosing the charset in this order: `explicit`, then
/// `record_charset`, then an XML or HTML declaration in the bytes, then
/// UTF-8. Undecodable bytes are an error naming the charset used.
pub fn decode_with_resolution(bytes: &[u8], explicit: Option<&str>, record_charset: Option<&str>) -> Result<String, String> {
    let head = String::from_utf8_lossy(&bytes[..bytes.len().min(1024)]);
    let label = explicit
        .or(record_charset)
        .map(str::to_string)
        .or_else(|| declared_encoding(&head))
        .or_else(|| crate::structure::sniff_meta_charset(bytes))
        .unwrap_or_else(|| "utf-8".to_string());
    let encoding =
        encoding_rs::Encoding::for_label(label.trim().as_bytes()).ok_or_else(|| format!("unknown charset {label:?}"))?;
    let (encoding, body) = match encoding_rs::Encoding::for_bom(bytes) {
        Some((bom_enc, n)) if explicit.is_none() => (bom_enc, &bytes[n..]),
        _ => (encoding, bytes),
    };
    encoding
        .decode_without_bom_handling_and_without_replacement(body)
        .map(|s| s.into_owned())
        .ok_or_else(|| format!("bytes are not valid {}", encoding.name()))
}

/// Re-encodes artifacts to UTF-8 and rewrites the XML declaration to say so.
struct Reencode {
    from: Option<String>,
}

impl Step for Reencode {
    fn name(&self) -> &str {
        "reencode"
    }

    fn run(&self, ctx: &StepContext<'_>, input: Vec<Artifact>) -> Result<Vec<Artifact>, String> {
        let mut out = Vec::new();
        for a in input {
            let text = decode_with_resolution(&read(&a)?, self.from.as_deref(), a.charset.as_deref())?;
            let text = match declared_encoding(&text) {
                Some(enc) => text.replacen(&enc, "UTF-8", 1),
                None => text,
            };
            out.push(emit(ctx, &a.name, text.as_bytes(), Some("utf-8".into()))?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvOptions {
    pub header_row: bool,
    pub delimiter: u8,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { header_row: true, delimiter: b',' }
    }
}

/// Convert CSV text to `<rows><row><col>value</col>...</row>...</rows>`.
///
/// Header cells become element names through the same sanitization as
/// synset names; without a header row, or for a header cell that sanitizes
/// to nothing, the name is `c<column number>` counting from 1. Empty cells
/// become empty elements.
pub fn csv_to_xml(text: &str, opts: CsvOptions) -> Result<String, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(opts.delimiter)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let mut names: Vec<String> = Vec::new();
    if opts.header_row {
        if let Some(h) = records.next() {
            let h = h.map_err(|e| format!("csv: {e}"))?;
            names = h
                .iter()
                .enumerate()
                .map(|(i, c)| sanitize_name(c).unwrap_or_else(|| format!("c{}", i + 1)))
                .collect();
        }
    }
    let mut out = String::from(XML_DECL);
    out.push_str("<rows>");
    for rec in records {
        let rec = rec.map_err(|e| format!("csv: {e}"))?;
        out.push_str("<row>");
        for (i, cell) in rec.iter().enumerate() {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("c{}", i + 1));
            if cell.is_empty() {
                out.push_str(&format!("<{name}/>"));
            } else {
                out.push_str(&format!("<{name}>{}</{name}>", escape_text(cell)));
            }
        }
        out.push_str("</row>");
    }
    out.push_str("</rows>\n");
    Ok(out)
}

struct CsvToXml(CsvOptions);

impl Step for CsvToXml {
    fn name(&self) -> &str {
        "csvToXml"
    }

    fn run(&self, ctx: &StepContext<'_>, input: Vec<Artifact>) -> Result<Vec<Artifact>, String> {
        let mut out = Vec::new();
        for a in input {
            let bytes = read(&a)?;
            let text = std::str::from_utf8(&bytes).map_err(|e| format!("{}: not UTF-8 ({e}); add a reencode step first", a.name))?;
            let xml = csv_to_xml(text.strip_prefix('\u{feff}').unwrap_or(text), self.0)?;
            out.push(emit(ctx, &format!("{}.xml", a.name), xml.as_bytes(), Some("utf-8".into()))?);
        }
        Ok(out)
    }
}

/// Structure analysis of HTML artifacts into key/value XML.
struct HtmlToXml {
    dict: Dictionary,
    config: ExtractionConfig,
    xml: XmlOptions,
}

impl Step for HtmlToXml {
    fn name(&self) -> &str {
        "htmlToXml"
    }

    fn run(&self, ctx: &StepContext<'_>, input: Vec<Artifact>) -> Result<Vec<Artifact>, String> {
        let mut out = Vec::new();
        for a in input {
            let (_, xml) = analyze(&read(&a)?, a.charset.as_deref(), &self.dict, &self.config, &self.xml)
                .map_err(|e| format!("{}: {e}", a.name))?;
            out.push(emit(ctx, &format!("{}.xml", a.name), &xml, Some("utf-8".into()))?);
        }
        Ok(out)
    }
}

/// Element names carrying an entry number, such as `cpv{n}c` for
/// `cpv1c`, `cpv2c`, ...
#[derive(Debug, Clone)]
pub struct RepetitivePattern {
    re: Regex,
    name: String,
}

impl RepetitivePattern {
    /// `pattern` must hold exactly one `{n}`. Matching elements are renamed to
    /// `name`, or to the text before `{n}` when no name is given.
    pub fn new(pattern: &str, name: Option<&str>) -> Result<Self, String> {
        let parts: Vec<&str> = pattern.split("{n}").collect();
        if parts.len() != 2 {
            return Err(format!("pattern {pattern:?} must contain exactly one {{n}}"));
        }
        let (prefix, suffix) = (parts[0], parts[1]);
        let name = name.map(str::to_string).unwrap_or_else(|| if prefix.is_empty() { suffix } else { prefix }.to_string());
        if name.is_empty() || sanitize_name(&name).as_deref() != Some(name.as_str()) {
            return Err(format!("{name:?} is not a usable element name"));
        }
        let re = Regex::new(&format!("^{}[0-9]+{}$", regex::escape(prefix), regex::escape(suffix))).map_err(|e| e.to_string())?;
        Ok(Self { re, name })
    }

    pub fn matches(&self, element: &str) -> bool {
        self.re.is_match(element)
    }
}

/// Rename numbered elements to one repeated name, keeping order, attributes
/// and content. Everything else is re-serialized as read.
pub fn rewrite_repetitive(xml: &[u8], pattern: &RepetitivePattern) -> Result<Vec<u8>, String> {
    let mut reader = quick_xml::Reader::from_reader(xml);
    reader.config_mut().trim_text(false);
    let mut writer = quick_xml::Writer::new(Vec::with_capacity(xml.len()));
    let rename = |e: &BytesStart<'_>| -> Option<BytesStart<'static>> {
        let qname = e.name();
        let name = std::str::from_utf8(qname.as_ref()).ok()?;
        if !pattern.matches(name) {
            return None;
        }
        let mut n = BytesStart::new(pattern.name.clone());
        n.extend_attributes(e.attributes().flatten());
        Some(n)
    };
    let mut buf = Vec::new();
    loop {
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| format!("XML error at byte {}: {e}", reader.error_position()))?;
        let result = match event {
            Event::Eof => break,
            Event::Start(e) => match rename(&e) {
                Some(n) => writer.write_event(Event::Start(n)),
                None => writer.write_event(Event::Start(e)),
            },
            Event::Empty(e) => match rename(&e) {
                Some(n) => writer.write_event(Event::Empty(n)),
                None => writer.write_event(Event::Empty(e)),
            },
            Event::End(e) => {
                let renamed = std::str::from_utf8(e.name().as_ref()).is_ok_and(|n| pattern.matches(n));
                if renamed {
                    writer.write_event(Event::End(BytesEnd::new(pattern.name.clone())))
                } else {
                    writer.write_event(Event::End(e))
                }
            }
            other => writer.write_event(other),
        };
        result.map_err(|e| e.to_string())?;
        buf.clear();
    }
    Ok(writer.into_inner())
}

struct RewriteRepetitive(RepetitivePattern);

impl Step for RewriteRepetitive {
    fn name(&self) -> &str {
        "rewriteRepetitive"
    }

    fn run(&self, ctx: &StepContext<'_>, input: Vec<Artifact>) -> Result<Vec<Artifact>, String> {
        let mut out = Vec::new();
        for a in input {
            let bytes = rewrite_repetitive(&read(&a)?, &self.0).map_err(|e| format!("{}: {e}", a.name))?;
            out.push(emit(ctx, &a.name, &bytes, a.charset.clone())?);
        }
        Ok(out)
    }
}
