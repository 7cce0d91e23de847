//! Corpus loading for line-delimited event-detection exports.
//!
//! Each line of a data file is one JSON document:
//!
//! ```text
//! {"doc_id": "d1", "text": "Troops fired at dawn",
//!  "events": [{"trigger": "fired", "span": [7, 12], "type": "Attack"}]}
//! ```
//!
//! Spans are character offsets over unicode scalar values, end-exclusive.
//! The event-type inventory lives in a sidecar file with one type per line.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" | "valid" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// Character span `[start, end)` over the unicode scalar sequence of a text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Returns the covered substring, or `None` when the span is out of bounds.
    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        if self.start > self.end {
            return None;
        }
        let start = char_to_byte(text, self.start)?;
        let end = char_to_byte(text, self.end)?;
        Some(&text[start..end])
    }
}

impl From<(usize, usize)> for CharSpan {
    fn from((start, end): (usize, usize)) -> Self {
        Self { start, end }
    }
}

impl From<CharSpan> for (usize, usize) {
    fn from(s: CharSpan) -> Self {
        (s.start, s.end)
    }
}

impl fmt::Display for CharSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// Byte offset of the `idx`-th char; `idx == char count` maps to `text.len()`.
pub(crate) fn char_to_byte(text: &str, idx: usize) -> Option<usize> {
    if idx == 0 {
        return Some(0);
    }
    let mut it = text.char_indices();
    match it.nth(idx) {
        Some((b, _)) => Some(b),
        None if text.chars().count() == idx => Some(text.len()),
        None => None,
    }
}

pub(crate) fn byte_to_char(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventMention {
    #[serde(rename = "trigger")]
    pub trigger_text: String,
    #[serde(rename = "span")]
    pub trigger_span: CharSpan,
    #[serde(rename = "type")]
    pub event_type: String,
}

impl EventMention {
    pub fn new(trigger: impl Into<String>, span: (usize, usize), event_type: impl Into<String>) -> Self {
        Self {
            trigger_text: trigger.into(),
            trigger_span: span.into(),
            event_type: event_type.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub text: String,
    pub events: Vec<EventMention>,
    pub split: Split,
}

impl AnnotatedDocument {
    /// Checks every mention against the text. The first problem found is returned.
    pub fn validate(&self) -> Result<()> {
        for m in &self.events {
            validate_mention(&self.doc_id, &self.text, m)?;
        }
        Ok(())
    }

    pub fn is_negative(&self) -> bool {
        self.events.is_empty()
    }
}

fn validate_mention(doc_id: &str, text: &str, m: &EventMention) -> Result<()> {
    let span = m.trigger_span;
    if span.start >= span.end {
        return Err(Error::InvalidSpan {
            doc_id: doc_id.to_string(),
            span,
            reason: "start must be < end".into(),
        });
    }
    if m.event_type.trim().is_empty() {
        return Err(Error::InvalidSpan {
            doc_id: doc_id.to_string(),
            span,
            reason: "empty event type".into(),
        });
    }
    match span.slice(text) {
        None => Err(Error::InvalidSpan {
            doc_id: doc_id.to_string(),
            span,
            reason: format!("out of bounds for text of {} chars", text.chars().count()),
        }),
        Some(found) if found != m.trigger_text => Err(Error::SpanMismatch {
            doc_id: doc_id.to_string(),
            span,
            expected: m.trigger_text.clone(),
            found: found.to_string(),
        }),
        Some(_) => Ok(()),
    }
}

/// Ordered, duplicate-free list of event-type labels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeInventory(Vec<String>);

impl TypeInventory {
    pub fn new<I, S>(types: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for t in types {
            let t: String = t.into();
            let t = t.trim().to_string();
            if t.is_empty() {
                continue;
            }
            if !seen.insert(t.clone()) {
                return Err(Error::InvalidArgument(format!("duplicate event type `{t}` in schema")));
            }
            out.push(t);
        }
        Ok(Self(out))
    }

    /// Reads a schema file: one type per line, blank lines and `#` comments skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(
            content
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut body = self.0.join("\n");
        body.push('\n');
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn contains(&self, t: &str) -> bool {
        self.0.iter().any(|x| x == t)
    }

    /// Case-insensitive lookup returning the inventory's own casing.
    pub fn canonical(&self, t: &str) -> Option<&str> {
        let t = t.trim();
        self.0
            .iter()
            .find(|x| x.eq_ignore_ascii_case(t) || x.to_lowercase() == t.to_lowercase())
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub documents: Vec<AnnotatedDocument>,
    pub type_inventory: TypeInventory,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    doc_id: Option<String>,
    text: String,
    #[serde(default)]
    events: Vec<EventMention>,
}

impl Corpus {
    /// Builds a corpus after checking every corpus invariant.
    pub fn new(name: impl Into<String>, documents: Vec<AnnotatedDocument>, type_inventory: TypeInventory) -> Result<Self> {
        let corpus = Self {
            name: name.into(),
            documents,
            type_inventory,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for doc in &self.documents {
            if !ids.insert(doc.doc_id.as_str()) {
                return Err(Error::DuplicateDocId(doc.doc_id.clone()));
            }
            doc.validate()?;
            for m in &doc.events {
                if !self.type_inventory.contains(&m.event_type) {
                    return Err(Error::UnknownEventType {
                        doc_id: doc.doc_id.clone(),
                        event_type: m.event_type.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<&AnnotatedDocument> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn index(&self) -> BTreeMap<&str, &AnnotatedDocument> {
        self.documents.iter().map(|d| (d.doc_id.as_str(), d)).collect()
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Writes the documents in the same line format `load_dataset` reads.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for doc in &self.documents {
            let rec = DocRecord {
                doc_id: Some(doc.doc_id.clone()),
                text: doc.text.clone(),
                events: doc.events.clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Loads one split. The corpus name is the parent directory name when the
/// file is called `<split>.jsonl`, otherwise the file stem.
pub fn load_dataset(path: impl AsRef<Path>, schema: &TypeInventory, split: Split) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let documents = read_documents(BufReader::new(file), path, split)?;
    Corpus::new(corpus_name(path), documents, schema.clone())
}

/// Parses documents from any line reader; `origin` is only used in error messages.
pub fn read_documents(reader: impl BufRead, origin: &Path, split: Split) -> Result<Vec<AnnotatedDocument>> {
    let mut docs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: origin.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let doc = AnnotatedDocument {
            doc_id: rec.doc_id.unwrap_or_else(|| format!("line-{line_no}")),
            text: rec.text,
            events: rec.events,
            split,
        };
        doc.validate()?;
        docs.push(doc);
    }
    Ok(docs)
}

fn corpus_name(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus");
    if stem.parse::<Split>().is_ok() {
        if let Some(dir) = path.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()) {
            return dir.to_string();
        }
    }
    stem.to_string()
}

/// Default sidecar location: `types.txt` next to the data file.
pub fn default_schema_path(data: &Path) -> PathBuf {
    data.with_file_name("types.txt")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub event_count: usize,
    pub type_count: usize,
    pub negative_doc_ratio: f64,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let doc_count = corpus.documents.len();
    let event_count = corpus.documents.iter().map(|d| d.events.len()).sum();
    let negatives = corpus.documents.iter().filter(|d| d.is_negative()).count();
    CorpusStats {
        doc_count,
        event_count,
        type_count: corpus.type_inventory.len(),
        negative_doc_ratio: if doc_count == 0 { 0.0 } else { negatives as f64 / doc_count as f64 },
    }
}
