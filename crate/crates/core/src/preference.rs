//! DPO preference pairs from model errors on a development split.
//!
//! A document yields a pair iff the model's parsed, normalized response
//! differs from the gold multiset. The gold rendering is the chosen answer
//! and the raw model response the rejected one.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AnnotatedDocument, Corpus};
use crate::instruction::{doc_rng, gen_record, render_response, Demarcation, ResponseMode};
use crate::parser::{normalize, parse_prediction, PredictionSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    #[serde(skip)]
    pub doc_id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

/// The multiset a response is compared on: pairs in scg mode, types in standard mode.
pub fn comparison_key(pred: &PredictionSet, mode: ResponseMode) -> Vec<(String, String)> {
    match mode {
        ResponseMode::Scg => pred.pair_multiset(),
        ResponseMode::Standard => pred.type_multiset().into_iter().map(|t| (String::new(), t)).collect(),
    }
}

pub fn gold_key(doc: &AnnotatedDocument, mode: ResponseMode) -> Vec<(String, String)> {
    let mut v: Vec<(String, String)> = doc
        .events
        .iter()
        .map(|m| match mode {
            ResponseMode::Scg => (normalize(&m.trigger_text), normalize(&m.event_type)),
            ResponseMode::Standard => (String::new(), normalize(&m.event_type)),
        })
        .collect();
    v.sort();
    v
}

/// Builds pairs in dev-corpus order. The prompt is the instruction record's
/// prompt section for the same seed, so pairs line up with the SFT data.
pub fn build_dpo_pairs(
    dev: &Corpus,
    model_outputs: &BTreeMap<String, String>,
    mode: ResponseMode,
    seed: u64,
    demarcation: &Demarcation,
) -> Result<Vec<PreferencePair>> {
    let index = dev.index();
    if let Some(unknown) = model_outputs.keys().find(|id| !index.contains_key(id.as_str())) {
        return Err(Error::UnknownDocId(unknown.clone()));
    }
    let mut pairs = Vec::new();
    for doc in &dev.documents {
        let Some(raw) = model_outputs.get(&doc.doc_id) else { continue };
        let parsed = parse_prediction(raw, &dev.type_inventory);
        if comparison_key(&parsed, mode) == gold_key(doc, mode) {
            continue;
        }
        let record = gen_record(doc, mode, &mut doc_rng(seed, &doc.doc_id), demarcation)?;
        pairs.push(PreferencePair {
            doc_id: doc.doc_id.clone(),
            prompt: record.prompt_text(),
            chosen: render_response(&doc.events, mode),
            rejected: raw.clone(),
        });
    }
    Ok(pairs)
}

/// One `{"prompt", "chosen", "rejected"}` object per line.
pub fn write_pairs(path: impl AsRef<Path>, pairs: &[PreferencePair]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
