//! Small XML helpers: element-name sanitization, escaping and a well-formedness
//! check.

/// Turn a free-text label into a valid XML element name.
///
/// Words after the first are capitalized and joined (`"Title of the
/// document"` becomes `TitleOfTheDocument`), characters outside the XML name
/// alphabet are dropped, and a leading digit, `-`, `.` or reserved `xml` prefix
/// gets an `_` prefix. Returns `None` when nothing usable remains.
pub fn sanitize_name(label: &str) -> Option<String> {
    let mut out = String::new();
    for (i, word) in label.split_whitespace().enumerate() {
        let cleaned: String = word.chars().filter(|c| is_name_char(*c)).collect();
        if cleaned.is_empty() {
            continue;
        }
        if i == 0 || out.is_empty() {
            out.push_str(&cleaned);
        } else {
            let mut chars = cleaned.chars();
            if let Some(first) = chars.next() {
                out.extend(first.to_uppercase());
                out.push_str(chars.as_str());
            }
        }
    }
    let first = out.chars().next()?;
    if !is_name_start_char(first) || out.to_ascii_lowercase().starts_with("xml") {
        out.insert(0, '_');
    }
    Some(out)
}

fn is_name_start_char(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_name_char(c: char) -> bool {
    is_name_start_char(c) || c.is_numeric() || c == '-' || c == '.'
}

/// Escape character data for element content.
pub fn escape_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            c if is_xml_char(c) => out.push(c),
            _ => {}
        }
    }
    out
}

/// Escape a value for a double-quoted attribute.
pub fn escape_attr(text: &str) -> String {
    escape_text(text).replace('"', "&quot;")
}

fn is_xml_char(c: char) -> bool {
    matches!(c, '\t' | '\n' | '\r') || (c >= ' ' && c != '\u{FFFE}' && c != '\u{FFFF}')
}

/// The XML declaration every normalized document starts with.
pub const XML_DECL: &str = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";

/// Parse `text` as XML and return the roxmltree error rendered with its
/// position when it is not well formed.
pub fn check_well_formed(text: &str) -> Result<(), String> {
    roxmltree::Document::parse_with_options(text, parse_options())
        .map(|_| ())
        .map_err(|e| e.to_string())
}

/// Parsing options used throughout the crate: DTDs allowed, entity expansion
/// bounded by roxmltree's defaults.
pub fn parse_options() -> roxmltree::ParsingOptions {
    roxmltree::ParsingOptions {
        allow_dtd: true,
        ..Default::default()
    }
}
