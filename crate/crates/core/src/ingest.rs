//! Source loaders: plain text, HTML, web pages and structured records.
//!
//! Every loader yields [`Document`]s whose text uses `\n` line endings and
//! whose metadata always carries a `source` key. Document ids are derived
//! from the source so that re-ingesting the same file replaces its chunks.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::redirect;
use scraper::{Html, Node, Selector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::debug;

use crate::config::defaults;

/// Sent with every web fetch.
pub const USER_AGENT: &str = concat!(
    "rag-core/",
    env!("CARGO_PKG_VERSION"),
    " (document ingestion; +https://example.invalid/rag-core)"
);

const BLOCK_ELEMENTS: &[&str] = &[
    "p", "div", "br", "li", "h1", "h2", "h3", "h4", "h5", "h6", "tr", "section", "article",
];
const SKIPPED_ELEMENTS: &[&str] = &["script", "style", "noscript", "template", "head"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("failed to read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name} is not valid UTF-8 (first bad byte at offset {offset})")]
    Decode { source_name: String, offset: usize },
    #[error("network error fetching {url}: {message}")]
    Network {
        url: String,
        status: Option<u16>,
        message: String,
    },
    #[error("{url} returned non-text content type {content_type}")]
    ContentType { url: String, content_type: String },
    #[error("host {host:?} is not in the fetch allowlist")]
    HostNotAllowed { host: String },
    #[error("invalid URL {0:?}")]
    InvalidUrl(String),
    #[error("parse error in {source_name} at {position}: {message}")]
    Parse {
        source_name: String,
        position: String,
        message: String,
    },
}

/// A loaded source: extracted plain text plus provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub metadata: BTreeMap<String, String>,
    pub char_count: usize,
}

impl Document {
    /// Builds a document whose id is derived from `source`.
    pub fn new(source: impl Into<String>, text: impl Into<String>) -> Self {
        let source = source.into();
        let text = text.into();
        let mut metadata = BTreeMap::new();
        metadata.insert("source".to_string(), source.clone());
        Self {
            id: document_id(&source),
            char_count: text.chars().count(),
            text,
            metadata,
        }
    }

    /// Wraps inline text; the source defaults to a content hash.
    pub fn from_inline(text: impl Into<String>, source: Option<String>) -> Self {
        let text = normalize_newlines(&text.into());
        let source = source.unwrap_or_else(|| format!("inline:{}", short_hash(&text)));
        Self::new(source, text)
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn source(&self) -> &str {
        self.metadata.get("source").map(String::as_str).unwrap_or("")
    }
}

/// Stable 16-hex-digit id for a source string.
pub fn document_id(source: &str) -> String {
    short_hash(source)
}

fn short_hash(s: &str) -> String {
    let digest = Sha256::digest(s.as_bytes());
    hex::encode(&digest[..8])
}

/// Converts `\r\n` and lone `\r` to `\n`.
pub fn normalize_newlines(text: &str) -> String {
    if !text.contains('\r') {
        return text.to_string();
    }
    text.replace("\r\n", "\n").replace('\r', "\n")
}

fn decode_utf8(bytes: Vec<u8>, source_name: &str) -> Result<String, IngestError> {
    let bytes = match bytes.strip_prefix(b"\xEF\xBB\xBF") {
        Some(rest) => rest.to_vec(),
        None => bytes,
    };
    String::from_utf8(bytes).map_err(|e| IngestError::Decode {
        source_name: source_name.to_string(),
        offset: e.utf8_error().valid_up_to(),
    })
}

fn read_file(path: &Path) -> Result<String, IngestError> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IngestError::FileNotFound(path.to_path_buf()),
        _ => IngestError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    decode_utf8(bytes, &path.display().to_string())
}

/// Loads a UTF-8 text file verbatim (BOM stripped, newlines normalized).
pub fn load_text(path: &Path) -> Result<Document, IngestError> {
    let text = normalize_newlines(&read_file(path)?);
    Ok(Document::new(path.display().to_string(), text))
}

/// Extracts visible text from HTML markup.
///
/// Script, style, noscript, template and head contents are dropped; block
/// elements start a new line; whitespace inside a line collapses to a single
/// space. The page `<title>`, if any, is recorded as `title` metadata.
pub fn load_html(html: &str, source: &str) -> Document {
    let dom = Html::parse_document(html);
    let mut raw = String::new();
    walk(dom.tree.root(), &mut raw);
    let text = raw
        .split('\n')
        .map(|line| line.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|line| !line.is_empty())
        .collect::<Vec<_>>()
        .join("\n");

    let mut doc = Document::new(source, text).with_meta("content_type", "text/html");
    let title_sel = Selector::parse("title").expect("static selector");
    if let Some(title) = dom.select(&title_sel).next() {
        let title = title.text().collect::<String>();
        let title = title.split_whitespace().collect::<Vec<_>>().join(" ");
        if !title.is_empty() {
            doc.metadata.insert("title".into(), title);
        }
    }
    doc
}

fn walk(node: ego_tree::NodeRef<'_, Node>, out: &mut String) {
    match node.value() {
        Node::Text(t) => {
            for ch in t.chars() {
                out.push(if ch.is_whitespace() { ' ' } else { ch });
            }
        }
        Node::Element(el) => {
            let name = el.name();
            if SKIPPED_ELEMENTS.contains(&name) {
                return;
            }
            let block = BLOCK_ELEMENTS.contains(&name);
            if block {
                out.push('\n');
            }
            for child in node.children() {
                walk(child, out);
            }
            if block {
                out.push('\n');
            }
        }
        Node::Document | Node::Fragment => {
            for child in node.children() {
                walk(child, out);
            }
        }
        _ => {}
    }
}

/// Limits for [`fetch_web`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchPolicy {
    /// Hosts that may be fetched. `"*"` allows any host; an empty list
    /// disables web fetching entirely.
    pub allowed_hosts: Vec<String>,
    pub timeout: Duration,
    pub max_redirects: usize,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        Self {
            allowed_hosts: Vec::new(),
            timeout: Duration::from_secs(defaults::FETCH_TIMEOUT_S),
            max_redirects: defaults::FETCH_MAX_REDIRECTS,
        }
    }
}

impl FetchPolicy {
    pub fn allows(&self, host: &str) -> bool {
        self.allowed_hosts
            .iter()
            .any(|h| h == "*" || h.eq_ignore_ascii_case(host))
    }
}

/// Fetches a page over HTTP(S) and extracts its text with [`load_html`].
///
/// Must not be called from inside an async runtime; wrap it in a blocking
/// task there.
pub fn fetch_web(url: &str, policy: &FetchPolicy) -> Result<Document, IngestError> {
    let parsed = url::Url::parse(url).map_err(|_| IngestError::InvalidUrl(url.to_string()))?;
    if !matches!(parsed.scheme(), "http" | "https") {
        return Err(IngestError::InvalidUrl(url.to_string()));
    }
    let host = parsed
        .host_str()
        .ok_or_else(|| IngestError::InvalidUrl(url.to_string()))?
        .to_string();
    if !policy.allows(&host) {
        return Err(IngestError::HostNotAllowed { host });
    }

    let redirect_policy = {
        let policy = policy.clone();
        redirect::Policy::custom(move |attempt| {
            if attempt.previous().len() > policy.max_redirects {
                attempt.error("too many redirects")
            } else if !attempt.url().host_str().is_some_and(|h| policy.allows(h)) {
                attempt.error("redirect target is not in the fetch allowlist")
            } else {
                attempt.follow()
            }
        })
    };
    let client = Client::builder()
        .user_agent(USER_AGENT)
        .timeout(policy.timeout)
        .redirect(redirect_policy)
        .build()
        .map_err(|e| network_error(url, None, e.to_string()))?;

    debug!(url, "fetching web page");
    let resp = client.get(parsed).send().map_err(|e| {
        let msg = if e.is_timeout() {
            "request timed out".to_string()
        } else {
            error_chain(&e.without_url())
        };
        network_error(url, None, msg)
    })?;
    let status = resp.status();
    if !status.is_success() {
        return Err(network_error(url, Some(status.as_u16()), format!("HTTP status {status}")));
    }
    let final_url = resp.url().to_string();
    if let Some(ct) = resp.headers().get(reqwest::header::CONTENT_TYPE) {
        let ct = ct.to_str().unwrap_or("").to_ascii_lowercase();
        let mime = ct.split(';').next().unwrap_or("").trim();
        let textual = mime.starts_with("text/")
            || mime == "application/xhtml+xml"
            || mime == "application/xml"
            || mime.is_empty();
        if !textual {
            return Err(IngestError::ContentType {
                url: final_url,
                content_type: mime.to_string(),
            });
        }
    }
    let body = resp
        .text()
        .map_err(|e| network_error(url, Some(status.as_u16()), e.to_string()))?;
    Ok(load_html(&body, &final_url))
}

/// The error and each of its sources, joined with `": "`.
fn error_chain(e: &dyn std::error::Error) -> String {
    let mut msg = e.to_string();
    let mut cur = e.source();
    while let Some(s) = cur {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        cur = s.source();
    }
    msg
}

fn network_error(url: &str, status: Option<u16>, message: String) -> IngestError {
    IngestError::Network {
        url: url.to_string(),
        status,
        message,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructuredFormat {
    /// Comma-separated rows with a header line.
    Delimited,
    /// A JSON array of flat objects.
    RecordList,
}

/// Loads one document per row or record; each field becomes a
/// `key: value` line.
pub fn load_structured(path: &Path, format: StructuredFormat) -> Result<Vec<Document>, IngestError> {
    let content = read_file(path)?;
    let source = path.display().to_string();
    let rows = match format {
        StructuredFormat::Delimited => parse_delimited(&content, &source)?,
        StructuredFormat::RecordList => parse_records(&content, &source)?,
    };
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(row, fields)| {
            let text = fields
                .iter()
                .map(|(k, v)| format!("{k}: {v}"))
                .collect::<Vec<_>>()
                .join("\n");
            let mut doc = Document::new(source.clone(), normalize_newlines(&text))
                .with_meta("row", row.to_string());
            doc.id = document_id(&format!("{source}#{row}"));
            doc
        })
        .collect())
}

type Fields = Vec<(String, String)>;

fn parse_delimited(content: &str, source: &str) -> Result<Vec<Fields>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(content.as_bytes());
    let parse_err = |e: csv::Error| {
        let position = e
            .position()
            .map(|p| format!("line {}", p.line()))
            .unwrap_or_else(|| "unknown position".into());
        IngestError::Parse {
            source_name: source.to_string(),
            position,
            message: e.to_string(),
        }
    };
    let headers = reader.headers().map_err(parse_err)?.clone();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(parse_err)?;
        rows.push(
            headers
                .iter()
                .zip(record.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect(),
        );
    }
    Ok(rows)
}

fn parse_records(content: &str, source: &str) -> Result<Vec<Fields>, IngestError> {
    let values: Vec<serde_json::Value> = serde_json::from_str(content).map_err(|e| IngestError::Parse {
        source_name: source.to_string(),
        position: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    values
        .into_iter()
        .enumerate()
        .map(|(i, value)| match value {
            serde_json::Value::Object(map) => Ok(map
                .into_iter()
                .map(|(k, v)| {
                    let v = match v {
                        serde_json::Value::String(s) => s,
                        serde_json::Value::Null => String::new(),
                        other => other.to_string(),
                    };
                    (k, v)
                })
                .collect()),
            _ => Err(IngestError::Parse {
                source_name: source.to_string(),
                position: format!("record {i}"),
                message: "expected an object".into(),
            }),
        })
        .collect()
}

/// A loader for one family of files, selected by extension.
pub trait Loader: Send + Sync {
    fn load(&self, path: &Path) -> Result<Vec<Document>, IngestError>;
}

struct TextLoader;
struct HtmlFileLoader;
struct StructuredLoader(StructuredFormat);

impl Loader for TextLoader {
    fn load(&self, path: &Path) -> Result<Vec<Document>, IngestError> {
        load_text(path).map(|d| vec![d])
    }
}

impl Loader for HtmlFileLoader {
    fn load(&self, path: &Path) -> Result<Vec<Document>, IngestError> {
        let html = read_file(path)?;
        Ok(vec![load_html(&html, &path.display().to_string())])
    }
}

impl Loader for StructuredLoader {
    fn load(&self, path: &Path) -> Result<Vec<Document>, IngestError> {
        load_structured(path, self.0)
    }
}

/// Maps file extensions to loaders. Unknown extensions fall back to the
/// plain-text loader. Binary formats (PDF, DOCX, ...) can be supported by
/// registering a loader for their extension.
#[derive(Clone)]
pub struct LoaderRegistry {
    by_extension: HashMap<String, Arc<dyn Loader>>,
    fallback: Arc<dyn Loader>,
}

impl fmt::Debug for LoaderRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut exts: Vec<_> = self.by_extension.keys().collect();
        exts.sort();
        f.debug_struct("LoaderRegistry").field("extensions", &exts).finish()
    }
}

impl Default for LoaderRegistry {
    fn default() -> Self {
        let mut reg = Self {
            by_extension: HashMap::new(),
            fallback: Arc::new(TextLoader),
        };
        for ext in ["txt", "text", "md", "markdown"] {
            reg.register(ext, Arc::new(TextLoader));
        }
        for ext in ["html", "htm", "xhtml"] {
            reg.register(ext, Arc::new(HtmlFileLoader));
        }
        reg.register("csv", Arc::new(StructuredLoader(StructuredFormat::Delimited)));
        reg.register("json", Arc::new(StructuredLoader(StructuredFormat::RecordList)));
        reg
    }
}

impl LoaderRegistry {
    pub fn register(&mut self, extension: &str, loader: Arc<dyn Loader>) {
        self.by_extension.insert(extension.to_ascii_lowercase(), loader);
    }

    pub fn load(&self, path: &Path) -> Result<Vec<Document>, IngestError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        self.by_extension.get(&ext).unwrap_or(&self.fallback).load(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(bytes: &[u8], name: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        std::fs::File::create(&path).unwrap().write_all(bytes).unwrap();
        (dir, path)
    }

    #[test]
    fn empty_file() {
        let (_d, p) = write_tmp(b"", "empty.txt");
        let doc = load_text(&p).unwrap();
        assert_eq!(doc.text, "");
        assert_eq!(doc.char_count, 0);
        assert_eq!(doc.source(), p.display().to_string());
    }

    #[test]
    fn crlf_normalized() {
        let (_d, p) = write_tmp(b"hello\r\nworld", "a.txt");
        let doc = load_text(&p).unwrap();
        assert_eq!(doc.text, "hello\nworld");
        assert_eq!(doc.char_count, 11);
    }

    #[test]
    fn bom_stripped() {
        let (_d, p) = write_tmp(b"\xEF\xBB\xBFcaf\xC3\xA9", "bom.txt");
        let doc = load_text(&p).unwrap();
        assert_eq!(doc.text, "café");
        assert_eq!(doc.char_count, 4);
    }

    #[test]
    fn invalid_utf8_is_decode_error() {
        let (_d, p) = write_tmp(b"ok\xFF\xFE", "bad.txt");
        match load_text(&p) {
            Err(IngestError::Decode { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file() {
        let err = load_text(Path::new("/definitely/not/here.txt")).unwrap_err();
        assert!(matches!(err, IngestError::FileNotFound(_)));
    }

    #[test]
    fn html_single_element() {
        assert_eq!(load_html("<p>hi</p>", "x").text, "hi");
    }

    #[test]
    fn html_script_dropped() {
        let doc = load_html("<div>a<script>x=1</script>b</div>", "x");
        assert!(doc.text == "ab" || doc.text == "a\nb", "{:?}", doc.text);
        assert!(!doc.text.contains("x=1"));
        assert_eq!(doc.metadata["content_type"], "text/html");
    }

    #[test]
    fn html_blocks_and_whitespace() {
        let html = "<html><head><title> My   Page </title><style>p{}</style></head>\
                    <body><h1>Title</h1><p>one\n   two</p><ul><li>a</li><li>b <b>bold</b></li></ul>\
                    line<br>break</body></html>";
        let doc = load_html(html, "src");
        assert_eq!(doc.text, "Title\none two\na\nb bold\nline\nbreak");
        assert_eq!(doc.metadata["title"], "My Page");
    }

    #[test]
    fn html_malformed_is_best_effort() {
        let doc = load_html("<p>unclosed <b>bold <i>it", "x");
        assert_eq!(doc.text, "unclosed bold it");
        let doc = load_html("a < b and c > d", "x");
        assert_eq!(doc.text, "a < b and c > d");
    }

    #[test]
    fn structured_csv() {
        let (_d, p) = write_tmp(b"name,dept\na,b\nc,d\n", "rows.csv");
        let docs = load_structured(&p, StructuredFormat::Delimited).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].text, "name: a\ndept: b");
        assert_eq!(docs[1].metadata["row"], "1");
        assert_ne!(docs[0].id, docs[1].id);
    }

    #[test]
    fn structured_csv_ragged_row_reports_line() {
        let (_d, p) = write_tmp(b"name,dept\na,b\nc\n", "bad.csv");
        match load_structured(&p, StructuredFormat::Delimited) {
            Err(IngestError::Parse { position, .. }) => assert_eq!(position, "line 3"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn structured_records() {
        let (_d, p) = write_tmp(br#"[{"name":"a","dept":"b"},{"n":1,"x":null}]"#, "r.json");
        let docs = load_structured(&p, StructuredFormat::RecordList).unwrap();
        assert_eq!(docs[0].text, "name: a\ndept: b");
        assert_eq!(docs[1].text, "n: 1\nx: ");

        let (_d, p) = write_tmp(b"[]", "empty.json");
        assert!(load_structured(&p, StructuredFormat::RecordList).unwrap().is_empty());

        let (_d, p) = write_tmp(b"[{\"a\":1},\n 5]", "bad.json");
        match load_structured(&p, StructuredFormat::RecordList) {
            Err(IngestError::Parse { position, .. }) => assert_eq!(position, "record 1"),
            other => panic!("unexpected {other:?}"),
        }
        let (_d, p) = write_tmp(b"[{\"a\":\n", "trunc.json");
        match load_structured(&p, StructuredFormat::RecordList) {
            Err(IngestError::Parse { position, .. }) => assert!(position.starts_with("line 2")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn registry_dispatch() {
        let (_d, p) = write_tmp(b"<p>x</p>", "page.HTML");
        let docs = LoaderRegistry::default().load(&p).unwrap();
        assert_eq!(docs[0].text, "x");
        let (_d, p) = write_tmp(b"<p>x</p>", "notes.unknown");
        let docs = LoaderRegistry::default().load(&p).unwrap();
        assert_eq!(docs[0].text, "<p>x</p>");
    }

    #[test]
    fn allowlist() {
        let mut p = FetchPolicy::default();
        assert!(!p.allows("example.com"));
        p.allowed_hosts = vec!["Example.com".into()];
        assert!(p.allows("example.com"));
        assert!(!p.allows("other.com"));
        p.allowed_hosts = vec!["*".into()];
        assert!(p.allows("other.com"));
        let err = fetch_web("http://blocked.test/", &FetchPolicy::default()).unwrap_err();
        assert!(matches!(err, IngestError::HostNotAllowed { .. }));
        let err = fetch_web("ftp://x/", &p).unwrap_err();
        assert!(matches!(err, IngestError::InvalidUrl(_)));
    }

    #[test]
    fn ids_are_stable() {
        assert_eq!(Document::new("a", "x").id, Document::new("a", "y").id);
        assert_ne!(Document::new("a", "x").id, Document::new("b", "x").id);
        let d = Document::from_inline("hi\r\n", None);
        assert_eq!(d.text, "hi\n");
        assert!(d.source().starts_with("inline:"));
    }
}
