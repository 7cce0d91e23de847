use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use scg_core::gateway::ProviderConfig;
use scg_core::prompting::{ExampleOrder, PromptMode};

/// Optional TOML run configuration. Every field can be overridden by a flag.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub schema: Option<PathBuf>,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub prompting: PromptingSection,
    pub inference: Option<ProviderSection>,
    pub ablation: Option<AblationSection>,
    #[serde(default)]
    pub embedding: EmbeddingSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptingSection {
    pub mode: Option<PromptMode>,
    pub example_order: Option<ExampleOrder>,
    pub task_description: Option<String>,
}

/// Provider settings where every field is optional, so flags can fill gaps.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_retries: Option<u32>,
    pub backoff_base_ms: Option<u64>,
    pub backoff_max_ms: Option<u64>,
    pub api_key_env: Option<String>,
    pub concurrency: Option<usize>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    #[serde(flatten)]
    pub provider: ProviderSection,
    pub max_attempts: Option<u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Http,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    pub kind: Option<EmbedderKind>,
    pub url: Option<String>,
    pub api_key_env: Option<String>,
    pub dimension: Option<usize>,
    pub timeout_secs: Option<u64>,
    pub batch_size: Option<usize>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: PipelineConfig = toml::from_str(&body).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg.relative_to(path.parent().unwrap_or(Path::new("."))))
    }

    /// Paths in a config file are relative to the file's directory.
    fn relative_to(mut self, base: &Path) -> Self {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.out_dir);
        fix(&mut self.schema);
        fix(&mut self.data.train);
        fix(&mut self.data.dev);
        fix(&mut self.data.test);
        self
    }
}

impl ProviderSection {
    /// Fields set in `over` win.
    pub fn merge(&self, over: &ProviderSection) -> ProviderSection {
        ProviderSection {
            endpoint: over.endpoint.clone().or_else(|| self.endpoint.clone()),
            model: over.model.clone().or_else(|| self.model.clone()),
            temperature: over.temperature.or(self.temperature),
            top_p: over.top_p.or(self.top_p),
            max_retries: over.max_retries.or(self.max_retries),
            backoff_base_ms: over.backoff_base_ms.or(self.backoff_base_ms),
            backoff_max_ms: over.backoff_max_ms.or(self.backoff_max_ms),
            api_key_env: over.api_key_env.clone().or_else(|| self.api_key_env.clone()),
            concurrency: over.concurrency.or(self.concurrency),
            timeout_secs: over.timeout_secs.or(self.timeout_secs),
        }
    }

    /// `None` when endpoint or model is missing.
    pub fn resolve(&self) -> Option<ProviderConfig> {
        let mut c = ProviderConfig::new(self.endpoint.clone()?, self.model.clone()?);
        if let Some(v) = self.temperature {
            c.temperature = v;
        }
        if let Some(v) = self.top_p {
            c.top_p = v;
        }
        if let Some(v) = self.max_retries {
            c.max_retries = v;
        }
        if let Some(v) = self.backoff_base_ms {
            c.backoff_base_ms = v;
        }
        if let Some(v) = self.backoff_max_ms {
            c.backoff_max_ms = v;
        }
        if let Some(v) = &self.api_key_env {
            c.api_key_env = v.clone();
        }
        if let Some(v) = self.concurrency {
            c.concurrency = v;
        }
        if let Some(v) = self.timeout_secs {
            c.timeout_secs = v;
        }
        Some(c)
    }
}
