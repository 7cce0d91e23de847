//! Parsing of raw model responses into prediction multisets.
//!
//! Canonical grammar, one prediction per line:
//!
//! ```text
//! response  := "None" | line ("\n" line)*
//! line      := scg-line | type-line
//! scg-line  := "Event trigger: " TRIGGER " ; Event type: " TYPE
//! type-line := "Event type: " TYPE
//! ```
//!
//! Anything else goes through a recovery pass that looks for `trigger` / `type`
//! labelled segments (`Trigger: x, Type: Y`, `{"trigger": "x", "event_type": "Y"}`, ...).
//! Parsing never fails; the outcome is carried in [`ParseStatus`].

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::ingest::TypeInventory;

/// Lowercase, trim, and collapse internal whitespace runs to one space.
pub fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Clean,
    Recovered,
    Failed,
}

/// One predicted (trigger, type) pair. Either side may be empty when the
/// response only carried the other one; empty strings never match gold.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prediction {
    pub trigger: String,
    pub event_type: String,
    /// Whether `event_type` was found in the schema (case-insensitively).
    pub known_type: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub doc_id: String,
    pub pairs: Vec<Prediction>,
    pub status: ParseStatus,
}

impl PredictionSet {
    pub fn empty(doc_id: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            pairs: Vec::new(),
            status: ParseStatus::Clean,
        }
    }

    pub fn with_doc_id(mut self, doc_id: impl Into<String>) -> Self {
        self.doc_id = doc_id.into();
        self
    }

    /// Normalized (trigger, type) multiset, sorted.
    pub fn pair_multiset(&self) -> Vec<(String, String)> {
        let mut v: Vec<_> = self.pairs.iter().map(|p| (normalize(&p.trigger), normalize(&p.event_type))).collect();
        v.sort();
        v
    }

    /// Normalized type multiset, sorted.
    pub fn type_multiset(&self) -> Vec<String> {
        let mut v: Vec<_> = self.pairs.iter().map(|p| normalize(&p.event_type)).collect();
        v.sort();
        v
    }

    pub fn unknown_type_count(&self) -> usize {
        self.pairs.iter().filter(|p| !p.event_type.is_empty() && !p.known_type).count()
    }
}

static SCG_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^Event trigger:\s*(\S.*?)\s*;\s*Event type:\s*(\S.*?)\s*$").unwrap());
static TYPE_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^Event type:\s*(\S.*?)\s*$").unwrap());
static LABELLED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r#"(?i)(?:\b|_)(trigger|type)s?(?:\s+(?:word|words|phrase|text))?["']?\s*[:=]\s*(?:"([^"]*)"|'([^']*)'|([^;,|}\]\n]*))"#,
    )
    .unwrap()
});

fn is_none_sentinel(s: &str) -> bool {
    s.trim().trim_end_matches('.').eq_ignore_ascii_case("none")
}

fn resolve_type(inventory: &TypeInventory, raw: &str) -> (String, bool) {
    match inventory.canonical(raw) {
        Some(t) => (t.to_string(), true),
        None => (raw.trim().to_string(), false),
    }
}

enum Label {
    Trigger(String),
    Type(String),
}

fn recover_line(line: &str) -> Vec<Label> {
    LABELLED
        .captures_iter(line)
        .filter_map(|c| {
            let value = c
                .get(2)
                .or_else(|| c.get(3))
                .or_else(|| c.get(4))
                .map(|m| m.as_str().trim().trim_matches(|ch| ch == '"' || ch == '\'' || ch == '`'))
                .map(|v| v.trim_end_matches('.').trim())
                .unwrap_or("");
            if value.is_empty() || is_none_sentinel(value) {
                return None;
            }
            let value = value.to_string();
            Some(if c[1].eq_ignore_ascii_case("trigger") {
                Label::Trigger(value)
            } else {
                Label::Type(value)
            })
        })
        .collect()
}

/// Parses one raw response against the schema.
pub fn parse_prediction(raw: &str, inventory: &TypeInventory) -> PredictionSet {
    let mut out = PredictionSet::empty(String::new());
    if is_none_sentinel(raw) {
        return out;
    }

    let mut all_canonical = true;
    let mut saw_none = false;
    let mut raw_pairs: Vec<(String, String)> = Vec::new();
    for line in raw.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(c) = SCG_LINE.captures(line) {
            raw_pairs.push((c[1].to_string(), c[2].to_string()));
        } else if let Some(c) = TYPE_LINE.captures(line) {
            raw_pairs.push((String::new(), c[1].to_string()));
        } else if is_none_sentinel(line) {
            saw_none = true;
        } else {
            all_canonical = false;
            let mut pending: Option<String> = None;
            for label in recover_line(line) {
                match label {
                    Label::Trigger(t) => {
                        if let Some(prev) = pending.replace(t) {
                            raw_pairs.push((prev, String::new()));
                        }
                    }
                    Label::Type(ty) => raw_pairs.push((pending.take().unwrap_or_default(), ty)),
                }
            }
            if let Some(prev) = pending {
                raw_pairs.push((prev, String::new()));
            }
        }
    }

    out.pairs = raw_pairs
        .into_iter()
        .map(|(trigger, ty)| {
            let (event_type, known_type) = if ty.is_empty() {
                (ty, false)
            } else {
                resolve_type(inventory, &ty)
            };
            Prediction {
                trigger: trigger.trim().to_string(),
                event_type,
                known_type,
            }
        })
        .collect();

    out.status = if all_canonical {
        ParseStatus::Clean
    } else if !out.pairs.is_empty() || saw_none {
        ParseStatus::Recovered
    } else {
        ParseStatus::Failed
    };
    out
}
