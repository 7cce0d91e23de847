//! Instruction-tuning records built from causal subgraphs.
//!
//! A record is an instruction variation, the document text and a response in
//! the canonical line grammar (see [`crate::parser`]). In `scg` mode every
//! line names the trigger before its type; `standard` mode lists types only.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{AnnotatedDocument, Corpus, EventMention};
use crate::scg::build_scg;
use crate::templates::{InstructionTemplate, TEMPLATE_COUNT};

pub const NONE_SENTINEL: &str = "None";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseMode {
    Scg,
    Standard,
}

impl fmt::Display for ResponseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResponseMode::Scg => "scg",
            ResponseMode::Standard => "standard",
        })
    }
}

impl FromStr for ResponseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scg" => Ok(ResponseMode::Scg),
            "standard" => Ok(ResponseMode::Standard),
            other => Err(Error::InvalidArgument(format!("unknown response mode `{other}`"))),
        }
    }
}

/// Tokens that open the instruction and the response sections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demarcation {
    pub instruction: String,
    pub response: String,
}

impl Default for Demarcation {
    fn default() -> Self {
        Self {
            instruction: "<|instruction|>".into(),
            response: "<|response|>".into(),
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Serializes gold mentions, ordered by span start (ties by type, then span end).
pub fn render_response(events: &[EventMention], mode: ResponseMode) -> String {
    if events.is_empty() {
        return NONE_SENTINEL.to_string();
    }
    let mut sorted: Vec<&EventMention> = events.iter().collect();
    sorted.sort_by(|a, b| {
        (a.trigger_span.start, &a.event_type, a.trigger_span.end, &a.trigger_text).cmp(&(
            b.trigger_span.start,
            &b.event_type,
            b.trigger_span.end,
            &b.trigger_text,
        ))
    });
    sorted
        .into_iter()
        .map(|m| match mode {
            ResponseMode::Scg => format!(
                "Event trigger: {} ; Event type: {}",
                one_line(&m.trigger_text),
                one_line(&m.event_type)
            ),
            ResponseMode::Standard => format!("Event type: {}", one_line(&m.event_type)),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionRecord {
    pub doc_id: String,
    pub template_id: u8,
    pub instruction_text: String,
    pub input_text: String,
    pub response_text: String,
    pub demarcation: Demarcation,
    pub mode: ResponseMode,
}

impl InstructionRecord {
    /// Instruction and input sections, ending with the response token.
    pub fn prompt_text(&self) -> String {
        format!(
            "{}\n{}\n\n{}\n{}\n",
            self.demarcation.instruction, self.instruction_text, self.input_text, self.demarcation.response
        )
    }

    pub fn training_text(&self) -> String {
        format!("{}{}", self.prompt_text(), self.response_text)
    }
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    instruction: String,
    input: String,
    output: String,
    meta: RecordMeta,
}

#[derive(Serialize, Deserialize)]
struct RecordMeta {
    doc_id: String,
    template_id: u8,
    mode: ResponseMode,
    demarcation: Demarcation,
}

impl InstructionRecord {
    /// `{"instruction", "input", "output", "meta": {doc_id, template_id, mode, demarcation}}`
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&RecordLine {
            instruction: self.instruction_text.clone(),
            input: self.input_text.clone(),
            output: self.response_text.clone(),
            meta: RecordMeta {
                doc_id: self.doc_id.clone(),
                template_id: self.template_id,
                mode: self.mode,
                demarcation: self.demarcation.clone(),
            },
        })?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let r: RecordLine = serde_json::from_str(line)?;
        Ok(Self {
            doc_id: r.meta.doc_id,
            template_id: r.meta.template_id,
            instruction_text: r.instruction,
            input_text: r.input,
            response_text: r.output,
            demarcation: r.meta.demarcation,
            mode: r.meta.mode,
        })
    }
}

/// Per-document seed so a record never depends on its position in the corpus.
pub fn doc_seed(seed: u64, doc_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(doc_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn doc_rng(seed: u64, doc_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(doc_seed(seed, doc_id))
}

/// Builds one record: draws a template uniformly, appends the document text
/// and serializes the mentions recovered from the causal subgraph.
pub fn gen_record<R: Rng + ?Sized>(
    doc: &AnnotatedDocument,
    mode: ResponseMode,
    rng: &mut R,
    demarcation: &Demarcation,
) -> Result<InstructionRecord> {
    for token in [&demarcation.instruction, &demarcation.response] {
        if doc.text.contains(token.as_str()) {
            return Err(Error::DemarcationCollision {
                doc_id: doc.doc_id.clone(),
                token: token.clone(),
            });
        }
    }
    let template_id = rng.gen_range(1..=TEMPLATE_COUNT as u8);
    let template = InstructionTemplate::get(template_id).expect("id drawn in range");
    let subgraph = build_scg(doc)?.causal_subgraph()?;
    Ok(InstructionRecord {
        doc_id: doc.doc_id.clone(),
        template_id,
        instruction_text: template.text.to_string(),
        input_text: doc.text.clone(),
        response_text: render_response(&subgraph.mentions(), mode),
        demarcation: demarcation.clone(),
        mode,
    })
}

/// Records for a whole corpus, in corpus order.
pub fn gen_records(corpus: &Corpus, mode: ResponseMode, seed: u64, demarcation: &Demarcation) -> Result<Vec<InstructionRecord>> {
    corpus
        .documents
        .iter()
        .map(|doc| gen_record(doc, mode, &mut doc_rng(seed, &doc.doc_id), demarcation))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub corpus: String,
    pub mode: ResponseMode,
    pub seed: u64,
    pub record_count: usize,
    pub demarcation: Demarcation,
    pub template_counts: BTreeMap<u8, usize>,
    pub records_file: String,
}

pub fn manifest_path(records: &Path) -> PathBuf {
    let mut name = records.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    records.with_file_name(name)
}

/// Writes the record file and its manifest (`<file>.manifest.json`).
pub fn gen_dataset(
    corpus: &Corpus,
    mode: ResponseMode,
    seed: u64,
    demarcation: &Demarcation,
    out: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out = out.as_ref();
    let records = gen_records(corpus, mode, seed, demarcation)?;
    let file = File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = BufWriter::new(file);
    let mut template_counts = BTreeMap::new();
    for r in &records {
        *template_counts.entry(r.template_id).or_insert(0) += 1;
        w.write_all(r.to_json_line()?.as_bytes()).map_err(|e| Error::io(out, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(out, e))?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;

    let manifest = DatasetManifest {
        corpus: corpus.name.clone(),
        mode,
        seed,
        record_count: records.len(),
        demarcation: demarcation.clone(),
        template_counts,
        records_file: out.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string(),
    };
    let mpath = manifest_path(out);
    let mut body = serde_json::to_string_pretty(&manifest)?;
    body.push('\n');
    std::fs::write(&mpath, body).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Split;

    fn doc(id: &str, text: &str, events: Vec<EventMention>) -> AnnotatedDocument {
        AnnotatedDocument {
            doc_id: id.into(),
            text: text.into(),
            events,
            split: Split::Train,
        }
    }

    #[test]
    fn single_mention_rendering() {
        let r = render_response(&[EventMention::new("fired", (7, 12), "Attack")], ResponseMode::Scg);
        assert_eq!(r, "Event trigger: fired ; Event type: Attack");
        let r = render_response(&[EventMention::new("fired", (7, 12), "Attack")], ResponseMode::Standard);
        assert_eq!(r, "Event type: Attack");
    }

    #[test]
    fn empty_rendering_is_sentinel() {
        assert_eq!(render_response(&[], ResponseMode::Scg), "None");
        assert_eq!(render_response(&[], ResponseMode::Standard), "None");
    }

    #[test]
    fn rendering_orders_by_span_start() {
        let events = vec![
            EventMention::new("march", (30, 35), "Movement"),
            EventMention::new("fired", (7, 12), "Attack"),
        ];
        let r = render_response(&events, ResponseMode::Scg);
        assert_eq!(
            r,
            "Event trigger: fired ; Event type: Attack\nEvent trigger: march ; Event type: Movement"
        );
    }

    #[test]
    fn seeded_template_choice_is_stable() {
        let d = doc("d0", "Troops fired at dawn", vec![EventMention::new("fired", (7, 12), "Attack")]);
        let a = gen_record(&d, ResponseMode::Scg, &mut doc_rng(0, "d0"), &Demarcation::default()).unwrap();
        let b = gen_record(&d, ResponseMode::Scg, &mut doc_rng(0, "d0"), &Demarcation::default()).unwrap();
        assert_eq!(a, b);
        assert!((1..=20).contains(&a.template_id));
    }

    #[test]
    fn template_one_text() {
        let d = doc("d0", "Troops fired at dawn", vec![]);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let r = gen_record(&d, ResponseMode::Scg, &mut rng, &Demarcation::default()).unwrap();
        assert_eq!(r.template_id, 1);
        assert!(r
            .instruction_text
            .starts_with("As an event detection assistant, your task is to identify the event triggers"));
        assert_eq!(r.response_text, "None");
    }

    #[test]
    fn demarcation_tokens_appear_once() {
        let d = doc("d0", "Troops fired at dawn", vec![EventMention::new("fired", (7, 12), "Attack")]);
        let r = gen_record(&d, ResponseMode::Scg, &mut doc_rng(3, "d0"), &Demarcation::default()).unwrap();
        let text = r.training_text();
        assert_eq!(text.matches("<|instruction|>").count(), 1);
        assert_eq!(text.matches("<|response|>").count(), 1);
        assert!(text.find("<|instruction|>") < text.find("<|response|>"));
    }

    #[test]
    fn collision_with_demarcation_is_an_error() {
        let d = doc("bad", "look <|response|> here", vec![]);
        let err = gen_record(&d, ResponseMode::Scg, &mut doc_rng(0, "bad"), &Demarcation::default()).unwrap_err();
        assert!(matches!(err, Error::DemarcationCollision { .. }));
    }

    #[test]
    fn record_line_shape() {
        let d = doc("d0", "Troops fired at dawn", vec![EventMention::new("fired", (7, 12), "Attack")]);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let r = gen_record(&d, ResponseMode::Scg, &mut rng, &Demarcation::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json_line().unwrap()).unwrap();
        assert_eq!(v["input"], "Troops fired at dawn");
        assert_eq!(v["output"], "Event trigger: fired ; Event type: Attack");
        assert_eq!(v["meta"]["template_id"], 1);
        assert_eq!(v["meta"]["mode"], "scg");
        assert_eq!(v["meta"]["demarcation"]["response"], "<|response|>");
    }
}
