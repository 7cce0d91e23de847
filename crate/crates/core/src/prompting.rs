//! Inference prompts: zero-shot, six random examples, or the six training
//! examples nearest to the target in embedding space.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gateway::{build_client, classify_status, excerpt, ChatRequest, ProviderError};
use crate::ingest::{AnnotatedDocument, Corpus, TypeInventory};
use crate::instruction::{doc_rng, render_response, ResponseMode};

pub const SHOTS: usize = 6;
pub const PROMPT_TEMPLATE_VERSION: &str = "v1";
pub const DEFAULT_TASK_DESCRIPTION: &str = "You are an event detection assistant. Identify the event triggers in the given text. An event trigger is a word or phrase that most explicitly describes an event happening in the text. Classify each trigger into one of the event types listed below.";
pub const ANSWER_FORMAT: &str = "Answer with one line per event in the form `Event trigger: <trigger> ; Event type: <event type>`. If the text contains no event, answer `None`.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    ZeroShot,
    SixShot,
    SixShotRag,
}

impl PromptMode {
    pub fn shots(self) -> usize {
        match self {
            PromptMode::ZeroShot => 0,
            PromptMode::SixShot | PromptMode::SixShotRag => SHOTS,
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::ZeroShot => "zero_shot",
            PromptMode::SixShot => "six_shot",
            PromptMode::SixShotRag => "six_shot_rag",
        })
    }
}

impl FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "zero_shot" => Ok(PromptMode::ZeroShot),
            "six_shot" => Ok(PromptMode::SixShot),
            "six_shot_rag" => Ok(PromptMode::SixShotRag),
            other => Err(Error::InvalidArgument(format!("unknown prompt mode `{other}`"))),
        }
    }
}

/// Where retrieved examples go relative to each other in the prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleOrder {
    #[default]
    MostSimilarLast,
    MostSimilarFirst,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    #[serde(default = "default_task")]
    pub task_description: String,
    #[serde(default)]
    pub example_order: ExampleOrder,
}

fn default_task() -> String {
    DEFAULT_TASK_DESCRIPTION.to_string()
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            task_description: default_task(),
            example_order: ExampleOrder::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptExample {
    pub doc_id: String,
    pub input: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub mode: PromptMode,
    pub task_description: String,
    pub type_inventory: Vec<String>,
    pub examples: Vec<PromptExample>,
    pub target_text: String,
}

impl PromptSpec {
    /// System message: task, full type list, answer format. User message:
    /// examples followed by the target.
    pub fn to_request(&self) -> ChatRequest {
        let system = format!(
            "{}\n\nEvent types:\n{}\n\n{}",
            self.task_description,
            self.type_inventory.join("\n"),
            ANSWER_FORMAT
        );
        let mut user = String::new();
        for ex in &self.examples {
            user.push_str(&format!("Text: {}\nAnswer:\n{}\n\n", ex.input, ex.response));
        }
        user.push_str(&format!("Text: {}\nAnswer:", self.target_text));
        ChatRequest::new(Some(system), user)
    }
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;
}

/// Embeds a batch and checks the provider kept its declared dimension.
pub fn embed(texts: &[String], provider: &dyn Embedder) -> Result<Vec<Vec<f32>>> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let vectors = provider.embed_raw(texts)?;
    if vectors.len() != texts.len() {
        return Err(ProviderError::Malformed(format!("{} vectors for {} texts", vectors.len(), texts.len())).into());
    }
    let dim = provider.dimension();
    for v in &vectors {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
    }
    Ok(vectors)
}

/// Deterministic bag-of-words feature hashing. Not semantic; meant for tests
/// and offline dry runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        for token in text.split_whitespace() {
            let token: String = token
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase();
            if token.is_empty() {
                continue;
            }
            let digest = Sha256::digest(token.as_bytes());
            let bucket = u64::from_le_bytes(digest[..8].try_into().unwrap()) as usize % self.dim;
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        v
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// HTTP embedding service: `POST {"texts": [...]}` answered by
/// `{"dimension": n, "vectors": [[...], ...]}`.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    dimension: usize,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dimension: usize,
    vectors: Vec<Vec<f32>>,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, api_key_env: Option<&str>, dimension: usize, timeout_secs: u64) -> Result<Self> {
        Ok(Self {
            client: build_client(timeout_secs)?,
            url: url.into(),
            api_key: api_key_env.and_then(|k| std::env::var(k).ok()).filter(|k| !k.is_empty()),
            dimension,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let mut req = self.client.post(&self.url).json(&EmbedRequest { texts });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, &body));
        }
        let parsed: EmbedResponse = serde_json::from_str(&body).map_err(|e| ProviderError::Malformed(format!("{e}: {}", excerpt(&body))))?;
        if parsed.dimension != self.dimension {
            return Err(ProviderError::Malformed(format!(
                "provider declared dimension {}, expected {}",
                parsed.dimension, self.dimension
            )));
        }
        Ok(parsed.vectors)
    }
}

// ---------------------------------------------------------------------------
// Index and cosine ranking
// ---------------------------------------------------------------------------

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

fn check_vector(v: &[f32], dim: usize, id: Option<&str>) -> Result<f64> {
    if v.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(id.map(str::to_string)));
    }
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::ZeroNorm(id.map(str::to_string)));
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dimension: usize,
    entries: Vec<(String, Vec<f32>)>,
    norms: Vec<f64>,
}

impl EmbeddingIndex {
    /// Rejects mismatched dimensions, non-finite components and zero vectors.
    pub fn new(dimension: usize, entries: Vec<(String, Vec<f32>)>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidArgument("index dimension must be positive".into()));
        }
        let norms = entries
            .iter()
            .map(|(id, v)| check_vector(v, dimension, Some(id)))
            .collect::<Result<_>>()?;
        Ok(Self {
            dimension,
            entries,
            norms,
        })
    }

    /// Embeds every document of a corpus in batches of `batch_size`.
    pub fn build(corpus: &Corpus, embedder: &dyn Embedder, batch_size: usize) -> Result<Self> {
        let batch_size = batch_size.max(1);
        let mut entries = Vec::with_capacity(corpus.len());
        for chunk in corpus.documents.chunks(batch_size) {
            let texts: Vec<String> = chunk.iter().map(|d| d.text.clone()).collect();
            let vectors = embed(&texts, embedder)?;
            entries.extend(chunk.iter().map(|d| d.doc_id.clone()).zip(vectors));
        }
        Self::new(embedder.dimension(), entries)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Vec<f32>)] {
        &self.entries
    }

    /// Entry positions and cosine similarities of the `k` best matches,
    /// descending, ties by ascending position.
    pub fn ranked(&self, query: &[f32], k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        let qn = check_vector(query, self.dimension, None)?;
        let mut scored: Vec<(usize, f64)> = self
            .entries
            .iter()
            .zip(&self.norms)
            .enumerate()
            .map(|(i, ((_, v), &vn))| {
                let dot: f64 = query.iter().zip(v).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
                (i, dot / (qn * vn))
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }
}

pub fn top_k_cosine(query: &[f32], index: &EmbeddingIndex, k: usize) -> Result<Vec<String>> {
    Ok(index
        .ranked(query, k)?
        .into_iter()
        .map(|(i, _)| index.entries[i].0.clone())
        .collect())
}

// ---------------------------------------------------------------------------
// Prompt construction
// ---------------------------------------------------------------------------

pub enum ExampleSelector<'a> {
    None,
    /// Uniform draw without replacement, seeded per target document.
    Random { seed: u64 },
    Retrieval {
        index: &'a EmbeddingIndex,
        embedder: &'a dyn Embedder,
    },
}

fn example(doc: &AnnotatedDocument) -> PromptExample {
    PromptExample {
        doc_id: doc.doc_id.clone(),
        input: doc.text.clone(),
        response: render_response(&doc.events, ResponseMode::Scg),
    }
}

pub fn build_prompt(
    mode: PromptMode,
    target: &AnnotatedDocument,
    train: &Corpus,
    inventory: &TypeInventory,
    selector: &ExampleSelector<'_>,
    config: &PromptConfig,
) -> Result<PromptSpec> {
    let shots = mode.shots();
    if shots > 0 && train.len() < shots {
        return Err(Error::NotEnoughExamples {
            needed: shots,
            available: train.len(),
        });
    }
    let examples = match (mode, selector) {
        (PromptMode::ZeroShot, _) => Vec::new(),
        (PromptMode::SixShot, ExampleSelector::Random { seed }) => {
            let mut rng = doc_rng(*seed, &target.doc_id);
            sample(&mut rng, train.len(), shots)
                .into_iter()
                .map(|i| example(&train.documents[i]))
                .collect()
        }
        (PromptMode::SixShotRag, ExampleSelector::Retrieval { index, embedder }) => {
            let query = embed(std::slice::from_ref(&target.text), *embedder)?.pop().unwrap_or_default();
            let ids = top_k_cosine(&query, index, shots)?;
            let by_id = train.index();
            let mut picked = ids
                .iter()
                .map(|id| by_id.get(id.as_str()).map(|d| example(d)).ok_or_else(|| Error::UnknownDocId(id.clone())))
                .collect::<Result<Vec<_>>>()?;
            if picked.len() < shots {
                return Err(Error::NotEnoughExamples {
                    needed: shots,
                    available: picked.len(),
                });
            }
            if config.example_order == ExampleOrder::MostSimilarLast {
                picked.reverse();
            }
            picked
        }
        (mode, _) => {
            return Err(Error::InvalidArgument(format!("{mode} needs a matching example selector")));
        }
    };
    Ok(PromptSpec {
        mode,
        task_description: config.task_description.clone(),
        type_inventory: inventory.as_slice().to_vec(),
        examples,
        target_text: target.text.clone(),
    })
}
