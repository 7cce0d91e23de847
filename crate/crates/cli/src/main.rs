//! `scg`: command-line front end for the event-detection toolkit.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::EmbedderKind;
use scg_core::instruction::ResponseMode;
use scg_core::metrics::EcUnit;
use scg_core::prompting::{ExampleOrder, PromptMode};

#[derive(Debug, Parser)]
#[command(name = "scg", version, about = "Event-detection datasets, prompting, inference and scoring")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus and write its graphs and statistics.
    Ingest(IngestArgs),
    /// Write an instruction-tuning dataset for a corpus.
    GenInstructions(GenInstructionsArgs),
    /// Write DPO preference pairs from a run on the development split.
    GenDpo(GenDpoArgs),
    /// Build prompts for a test split without sending them.
    Prompt(PromptArgs),
    /// Send prompts to a chat-completions endpoint (resumable).
    Infer(InferArgs),
    /// Turn a run's raw responses into predictions.
    Parse(ParseArgs),
    /// Score predictions against gold annotations.
    Score(ScoreArgs),
    /// Compute the dataset complexity score.
    Complexity(ComplexityArgs),
    /// Rewrite test contexts while keeping trigger words.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Event-type inventory, one type per line (default: types.txt next to the data).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Split label (default: inferred from the file name, else train).
    #[arg(long)]
    pub split: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct GenInstructionsArgs {
    /// Training corpus (default: data.train from the config).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "scg")]
    pub mode: ResponseMode,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub instruction_token: Option<String>,
    #[arg(long)]
    pub response_token: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct GenDpoArgs {
    /// Development corpus (default: data.dev from the config).
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Run manifest produced by `infer` on the development split.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value = "scg")]
    pub mode: ResponseMode,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct PromptOpts {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// zero-shot, six-shot or six-shot-rag.
    #[arg(long)]
    pub mode: Option<PromptMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub example_order: Option<ExampleOrderArg>,
    #[arg(long, value_enum)]
    pub embedder: Option<EmbedderKind>,
    #[arg(long)]
    pub embedding_url: Option<String>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ExampleOrderArg {
    MostSimilarLast,
    MostSimilarFirst,
}

impl From<ExampleOrderArg> for ExampleOrder {
    fn from(a: ExampleOrderArg) -> Self {
        match a {
            ExampleOrderArg::MostSimilarLast => ExampleOrder::MostSimilarLast,
            ExampleOrderArg::MostSimilarFirst => ExampleOrder::MostSimilarFirst,
        }
    }
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    #[command(flatten)]
    pub prompt: PromptOpts,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ProviderFlags {
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Name of the environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub prompt: PromptOpts,
    #[command(flatten)]
    pub provider: ProviderFlags,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// Run manifest produced by `infer`.
    #[arg(long)]
    pub run: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Predictions file produced by `parse`.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, value_enum, default_value = "mention")]
    pub ec_unit: EcUnitArg,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum EcUnitArg {
    Mention,
    DocumentSet,
}

impl From<EcUnitArg> for EcUnit {
    fn from(a: EcUnitArg) -> Self {
        match a {
            EcUnitArg::Mention => EcUnit::Mention,
            EcUnitArg::DocumentSet => EcUnit::DocumentSet,
        }
    }
}

#[derive(Debug, Args)]
pub struct ComplexityArgs {
    #[arg(long, conflicts_with = "from_table", required_unless_present = "from_table")]
    pub data: Option<PathBuf>,
    /// Compute C directly from ATL TPD ET MTR.
    #[arg(long, num_args = 4, value_names = ["ATL", "TPD", "ET", "MTR"], allow_negative_numbers = true)]
    pub from_table: Option<Vec<f64>>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Test corpus (default: data.test from the config).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub max_attempts: Option<u32>,
    #[command(flatten)]
    pub provider: ProviderFlags,
    #[command(flatten)]
    pub common: Common,
}

/// Bad or missing invocation input; exits with status 2 like clap's own errors.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
