//! Event-detection dataset and evaluation toolkit built around semantic
//! causal graphs.
//!
//! The pipeline, module by module:
//!
//! - [`ingest`]: line-delimited corpora with character-offset trigger spans
//! - [`scg`]: graph construction, structural validation, causal subgraphs
//! - [`instruction`]: SCG-instruction and standard instruction records
//! - [`prompting`]: zero-shot / six-shot / six-shot retrieval prompts
//! - [`gateway`]: chat-completions client, retries, resumable run manifests
//! - [`parser`]: raw responses to prediction multisets
//! - [`metrics`]: EC / TI / TC micro scores
//! - [`preference`]: DPO pairs from development-set errors
//! - [`ablation`]: context-rewritten test corpora with trigger verification
//! - [`complexity`]: dataset complexity score

pub mod ablation;
pub mod complexity;
pub mod error;
pub mod gateway;
pub mod ingest;
pub mod instruction;
pub mod metrics;
pub mod parser;
pub mod preference;
pub mod prompting;
pub mod scg;
pub mod templates;

pub use error::{Error, Result};
