//! Context-perturbed test corpora.
//!
//! Each document is rewritten by an LLM told to change entities, places and
//! dates while keeping the gold triggers. A rewrite is accepted only if every
//! trigger still occurs at least as often as in the gold annotation; after
//! `max_attempts` rejected rewrites the document is left out of the output.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{ChatProvider, ChatRequest, SamplingParams};
use crate::ingest::{byte_to_char, AnnotatedDocument, CharSpan, Corpus, EventMention};

pub const DEFAULT_MAX_ATTEMPTS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationStatus {
    Accepted,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationResult {
    pub doc_id: String,
    pub original_text: String,
    pub modified_text: Option<String>,
    pub attempts: u32,
    pub status: AblationStatus,
    pub triggers_verified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_error: Option<String>,
}

fn multiplicities<'a>(triggers: impl IntoIterator<Item = &'a str>) -> BTreeMap<&'a str, usize> {
    let mut m = BTreeMap::new();
    for t in triggers {
        *m.entry(t).or_insert(0) += 1;
    }
    m
}

/// True iff each distinct trigger occurs (case-sensitive, non-overlapping)
/// in `modified` at least as many times as it appears in `gold`.
pub fn verify_triggers_preserved(modified: &str, gold: &[&str]) -> bool {
    multiplicities(gold.iter().copied())
        .into_iter()
        .all(|(t, n)| !t.is_empty() && modified.matches(t).count() >= n)
}

/// Assigns new spans: the k-th mention of a trigger (in original span order)
/// gets the k-th leftmost occurrence. `None` when occurrences run out.
pub fn reanchor(events: &[EventMention], modified: &str) -> Option<Vec<EventMention>> {
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by_key(|&i| (events[i].trigger_span, i));

    let mut occurrences: BTreeMap<&str, std::vec::IntoIter<usize>> = BTreeMap::new();
    let mut out = events.to_vec();
    for i in order {
        let t = events[i].trigger_text.as_str();
        let next = occurrences
            .entry(t)
            .or_insert_with(|| modified.match_indices(t).map(|(b, _)| b).collect::<Vec<_>>().into_iter())
            .next()?;
        let start = byte_to_char(modified, next);
        out[i].trigger_span = CharSpan::new(start, start + t.chars().count());
    }
    Some(out)
}

/// User message: the text and the trigger phrases that must survive.
pub fn ablation_request(doc: &AnnotatedDocument, system_prompt: &str) -> ChatRequest {
    let mut events: Vec<&EventMention> = doc.events.iter().collect();
    events.sort_by_key(|m| m.trigger_span);
    let mut triggers: Vec<&str> = Vec::new();
    for m in events {
        if !triggers.contains(&m.trigger_text.as_str()) {
            triggers.push(&m.trigger_text);
        }
    }
    let list = if triggers.is_empty() {
        "(none)".to_string()
    } else {
        triggers.iter().map(|t| format!("- {t}")).collect::<Vec<_>>().join("\n")
    };
    ChatRequest::new(
        Some(system_prompt.to_string()),
        format!("Text:\n{}\n\nTrigger words/phrases to keep:\n{}", doc.text, list),
    )
}

pub fn ablate_document(
    doc: &AnnotatedDocument,
    provider: &dyn ChatProvider,
    system_prompt: &str,
    max_attempts: u32,
    params: &SamplingParams,
) -> Result<AblationResult> {
    if max_attempts == 0 {
        return Err(Error::InvalidArgument("max_attempts must be >= 1".into()));
    }
    let request = ablation_request(doc, system_prompt);
    let gold: Vec<&str> = doc.events.iter().map(|m| m.trigger_text.as_str()).collect();
    let mut last_error = None;
    for attempt in 1..=max_attempts {
        match provider.chat(&request, params) {
            Ok(text) => {
                let text = text.trim().to_string();
                if verify_triggers_preserved(&text, &gold) {
                    return Ok(AblationResult {
                        doc_id: doc.doc_id.clone(),
                        original_text: doc.text.clone(),
                        modified_text: Some(text),
                        attempts: attempt,
                        status: AblationStatus::Accepted,
                        triggers_verified: true,
                        last_error: None,
                    });
                }
                last_error = Some("rewrite dropped a trigger".to_string());
            }
            Err(e) => last_error = Some(e.to_string()),
        }
    }
    Ok(AblationResult {
        doc_id: doc.doc_id.clone(),
        original_text: doc.text.clone(),
        modified_text: None,
        attempts: max_attempts,
        status: AblationStatus::Exhausted,
        triggers_verified: false,
        last_error,
    })
}

#[derive(Debug, Clone)]
pub struct AblationOutput {
    /// Accepted documents with rewritten text and re-anchored spans.
    pub corpus: Corpus,
    /// One result per input document, in input order.
    pub results: Vec<AblationResult>,
}

impl AblationOutput {
    pub fn exhausted(&self) -> impl Iterator<Item = &AblationResult> {
        self.results.iter().filter(|r| r.status == AblationStatus::Exhausted)
    }
}

pub fn ablate_corpus(
    corpus: &Corpus,
    provider: &dyn ChatProvider,
    system_prompt: &str,
    max_attempts: u32,
    params: &SamplingParams,
    concurrency: usize,
) -> Result<AblationOutput> {
    let n = corpus.documents.len();
    let slots: Mutex<Vec<Option<Result<AblationResult>>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..concurrency.clamp(1, n.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(doc) = corpus.documents.get(i) else { break };
                let r = ablate_document(doc, provider, system_prompt, max_attempts, params);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let results: Vec<AblationResult> = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect::<Result<_>>()?;

    let mut documents = Vec::new();
    for (doc, result) in corpus.documents.iter().zip(&results) {
        let Some(text) = &result.modified_text else { continue };
        let events = reanchor(&doc.events, text).expect("verified rewrites always re-anchor");
        documents.push(AnnotatedDocument {
            doc_id: doc.doc_id.clone(),
            text: text.clone(),
            events,
            split: doc.split,
        });
    }
    let out = Corpus::new(format!("{}-ablated", corpus.name), documents, corpus.type_inventory.clone())?;
    Ok(AblationOutput { corpus: out, results })
}
