use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use scg_core::ablation::{ablate_corpus, AblationStatus, DEFAULT_MAX_ATTEMPTS};
use scg_core::complexity::{complexity_from_corpus, complexity_from_metrics};
use scg_core::gateway::{batch_infer, HttpChatProvider, ProviderConfig, RunHeader, RunManifest};
use scg_core::ingest::{corpus_stats, default_schema_path, load_dataset, Corpus, Split, TypeInventory};
use scg_core::instruction::{gen_dataset, Demarcation};
use scg_core::metrics::score_with;
use scg_core::parser::{parse_prediction, ParseStatus, PredictionSet};
use scg_core::preference::{build_dpo_pairs, write_pairs};
use scg_core::prompting::{build_prompt, Embedder, EmbeddingIndex, ExampleSelector, HashEmbedder, HttpEmbedder, PromptConfig, PromptMode};
use scg_core::scg::{build_scg, write_graphs};
use scg_core::templates::ABLATION_SYSTEM_PROMPT;

use crate::config::{EmbedderKind, PipelineConfig, ProviderSection};
use crate::*;

const DEFAULT_SEED: u64 = 42;
const DEFAULT_HASH_DIM: usize = 256;

struct Ctx {
    cfg: PipelineConfig,
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) if !path.is_file() => return Err(Usage(format!("config file {} not found", path.display())).into()),
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let ctx = Ctx { cfg };
    match cli.command {
        Command::Ingest(a) => ctx.ingest(a),
        Command::GenInstructions(a) => ctx.gen_instructions(a),
        Command::GenDpo(a) => ctx.gen_dpo(a),
        Command::Prompt(a) => ctx.prompt(a),
        Command::Infer(a) => ctx.infer(a),
        Command::Parse(a) => ctx.parse(a),
        Command::Score(a) => ctx.score(a),
        Command::Complexity(a) => ctx.complexity(a),
        Command::Ablate(a) => ctx.ablate(a),
    }
}

fn require(flag: Option<PathBuf>, fallback: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    let path = flag.or_else(|| fallback.cloned()).ok_or_else(|| Usage(format!("missing {what}")))?;
    if !path.is_file() {
        return Err(anyhow!("{} does not exist", path.display()));
    }
    Ok(path)
}

fn split_of(path: &Path, default: Split) -> Split {
    path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string()
}

impl Ctx {
    fn schema_for(&self, flag: &Option<PathBuf>, data: &Path) -> Result<TypeInventory> {
        let path = flag.clone().or_else(|| self.cfg.schema.clone()).unwrap_or_else(|| default_schema_path(data));
        TypeInventory::load(&path).with_context(|| format!("loading schema {}", path.display()))
    }

    fn corpus(&self, data: &Path, common: &Common, split: Split) -> Result<Corpus> {
        let schema = self.schema_for(&common.schema, data)?;
        Ok(load_dataset(data, &schema, split)?)
    }

    fn out_dir(&self, common: &Common) -> Result<PathBuf> {
        let dir = common
            .out
            .clone()
            .or_else(|| self.cfg.out_dir.clone())
            .ok_or_else(|| Usage("missing --out (or out_dir in the config)".into()))?;
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.cfg.seed).unwrap_or(DEFAULT_SEED)
    }

    /// `<out>/<command>.manifest.json`: what ran, on what, producing what.
    fn record(&self, out: &Path, command: &str, params: Value, outputs: &[&Path]) -> Result<()> {
        let manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "params": params,
            "outputs": outputs.iter().map(|p| file_name(p)).collect::<Vec<_>>(),
        });
        write_json(&out.join(format!("{command}.manifest.json")), &manifest)
    }

    fn ingest(&self, a: IngestArgs) -> Result<()> {
        let data = require(Some(a.data), None, "--data")?;
        let split = match &a.split {
            Some(s) => s.parse().map_err(|e: scg_core::Error| Usage(e.to_string()))?,
            None => split_of(&data, Split::Train),
        };
        let corpus = self.corpus(&data, &a.common, split)?;
        let out = self.out_dir(&a.common)?;
        let graphs = corpus.documents.iter().map(build_scg).collect::<scg_core::Result<Vec<_>>>()?;
        let graphs_path = out.join(format!("{}.{split}.graphs.jsonl", corpus.name));
        write_graphs(&graphs_path, &graphs)?;
        let stats = corpus_stats(&corpus);
        let stats_path = out.join(format!("{}.{split}.stats.json", corpus.name));
        write_json(&stats_path, &stats)?;
        self.record(
            &out,
            "ingest",
            json!({"data": data, "split": split.to_string(), "corpus": corpus.name}),
            &[&graphs_path, &stats_path],
        )?;
        println!(
            "ingested {} documents ({} events, {} types) from {}",
            stats.doc_count,
            stats.event_count,
            stats.type_count,
            data.display()
        );
        Ok(())
    }

    fn gen_instructions(&self, a: GenInstructionsArgs) -> Result<()> {
        let data = require(a.data, self.cfg.data.train.as_ref(), "--data (or data.train in the config)")?;
        let split = split_of(&data, Split::Train);
        let corpus = self.corpus(&data, &a.common, split)?;
        let out = self.out_dir(&a.common)?;
        let seed = self.seed(a.seed);
        let mut dem = Demarcation::default();
        if let Some(t) = a.instruction_token {
            dem.instruction = t;
        }
        if let Some(t) = a.response_token {
            dem.response = t;
        }
        let path = out.join(format!("{}.{split}.{}.jsonl", corpus.name, a.mode));
        let manifest = gen_dataset(&corpus, a.mode, seed, &dem, &path)?;
        let dataset_manifest = scg_core::instruction::manifest_path(&path);
        self.record(
            &out,
            "gen-instructions",
            json!({"data": data, "mode": a.mode, "seed": seed, "demarcation": dem}),
            &[&path, &dataset_manifest],
        )?;
        println!("wrote {} {} records to {}", manifest.record_count, a.mode, path.display());
        Ok(())
    }

    fn gen_dpo(&self, a: GenDpoArgs) -> Result<()> {
        let dev_path = require(a.dev, self.cfg.data.dev.as_ref(), "--dev (or data.dev in the config)")?;
        let dev = self.corpus(&dev_path, &a.common, split_of(&dev_path, Split::Dev))?;
        let run = RunManifest::load(&a.run)?;
        let out = self.out_dir(&a.common)?;
        let seed = self.seed(a.seed);
        let responses = run.responses();
        let pairs = build_dpo_pairs(&dev, &responses, a.mode, seed, &Demarcation::default())?;
        let path = out.join(format!("dpo.{}.jsonl", a.mode));
        write_pairs(&path, &pairs)?;
        self.record(
            &out,
            "gen-dpo",
            json!({"dev": dev_path, "run": a.run, "run_id": run.header.run_id, "mode": a.mode, "seed": seed,
                   "responses": responses.len(), "pairs": pairs.len()}),
            &[&path],
        )?;
        println!("wrote {} preference pairs from {} responses to {}", pairs.len(), responses.len(), path.display());
        Ok(())
    }

    fn embedder(&self, o: &PromptOpts) -> Result<Box<dyn Embedder>> {
        let e = &self.cfg.embedding;
        match o.embedder.or(e.kind).unwrap_or_default() {
            EmbedderKind::Hash => Ok(Box::new(HashEmbedder::new(o.embedding_dim.or(e.dimension).unwrap_or(DEFAULT_HASH_DIM).max(1)))),
            EmbedderKind::Http => {
                let url = o
                    .embedding_url
                    .clone()
                    .or_else(|| e.url.clone())
                    .ok_or_else(|| Usage("http embedder needs --embedding-url (or embedding.url)".into()))?;
                let dim = o
                    .embedding_dim
                    .or(e.dimension)
                    .ok_or_else(|| Usage("http embedder needs --embedding-dim (or embedding.dimension)".into()))?;
                Ok(Box::new(HttpEmbedder::new(url, e.api_key_env.as_deref(), dim, e.timeout_secs.unwrap_or(120))?))
            }
        }
    }

    /// Loads both splits and returns a prompt builder for the test documents.
    fn prompt_setup(&self, o: &PromptOpts, common: &Common) -> Result<PromptSetup> {
        let mode = o.mode.or(self.cfg.prompting.mode).ok_or_else(|| Usage("missing --mode (or prompting.mode)".into()))?;
        let test_path = require(o.test.clone(), self.cfg.data.test.as_ref(), "--test (or data.test in the config)")?;
        let test = self.corpus(&test_path, common, split_of(&test_path, Split::Test))?;
        let train = if mode == PromptMode::ZeroShot {
            Corpus::new("empty", Vec::new(), test.type_inventory.clone())?
        } else {
            let p = require(o.train.clone(), self.cfg.data.train.as_ref(), "--train (or data.train in the config)")?;
            self.corpus(&p, common, split_of(&p, Split::Train))?
        };
        let mut config = PromptConfig::default();
        if let Some(t) = &self.cfg.prompting.task_description {
            config.task_description = t.clone();
        }
        if let Some(order) = o.example_order.map(Into::into).or(self.cfg.prompting.example_order) {
            config.example_order = order;
        }
        let embedder = if mode == PromptMode::SixShotRag { Some(self.embedder(o)?) } else { None };
        let index = match &embedder {
            Some(e) => Some(EmbeddingIndex::build(&train, e.as_ref(), self.cfg.embedding.batch_size.unwrap_or(32))?),
            None => None,
        };
        Ok(PromptSetup {
            mode,
            seed: self.seed(o.seed),
            test_path,
            train,
            test,
            config,
            embedder,
            index,
        })
    }

    fn prompt(&self, a: PromptArgs) -> Result<()> {
        let s = self.prompt_setup(&a.prompt, &a.common)?;
        let out = self.out_dir(&a.common)?;
        let mut lines = Vec::new();
        for doc in &s.test.documents {
            let spec = s.build(doc)?;
            let req = spec.to_request();
            lines.push(json!({
                "doc_id": doc.doc_id,
                "prompt_hash": req.hash(),
                "examples": spec.examples.iter().map(|e| e.doc_id.as_str()).collect::<Vec<_>>(),
                "system": req.system,
                "user": req.user,
            }));
        }
        let path = out.join(format!("prompts.{}.jsonl", s.mode));
        write_lines(&path, &lines)?;
        self.record(&out, "prompt", s.params(), &[&path])?;
        println!("wrote {} {} prompts to {}", lines.len(), s.mode, path.display());
        Ok(())
    }

    fn provider(&self, section: Option<&ProviderSection>, flags: &ProviderFlags) -> Result<ProviderConfig> {
        let over = ProviderSection {
            endpoint: flags.endpoint.clone(),
            model: flags.model.clone(),
            temperature: flags.temperature,
            top_p: flags.top_p,
            max_retries: flags.max_retries,
            api_key_env: flags.api_key_env.clone(),
            concurrency: flags.concurrency,
            timeout_secs: flags.timeout_secs,
            ..Default::default()
        };
        let merged = section.cloned().unwrap_or_default().merge(&over);
        let cfg = merged.resolve().ok_or_else(|| Usage("missing --endpoint/--model (or the provider section in the config)".into()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn infer(&self, a: InferArgs) -> Result<()> {
        let s = self.prompt_setup(&a.prompt, &a.common)?;
        let provider_cfg = self.provider(self.cfg.inference.as_ref(), &a.provider)?;
        let out = self.out_dir(&a.common)?;
        let provider = HttpChatProvider::from_config(&provider_cfg)?;
        let seed = (s.mode == PromptMode::SixShot).then_some(s.seed);
        let header = RunHeader::new(format!("{}.{}", s.test.name, split_of(&s.test_path, Split::Test)), s.mode.to_string(), provider_cfg, seed);
        let path = out.join(format!("run.{}.jsonl", s.mode));
        let run = batch_infer(&s.test.documents, header, |d| s.build(d).map(|p| p.to_request()), &provider, &path)?;
        self.record(&out, "infer", s.params(), &[&path])?;
        println!(
            "{} responses, {} errors ({:?}) in {}",
            run.records.len() - run.error_count(),
            run.error_count(),
            run.status,
            path.display()
        );
        Ok(())
    }

    fn parse(&self, a: ParseArgs) -> Result<()> {
        let run = RunManifest::load(&a.run)?;
        let schema_path = a
            .common
            .schema
            .clone()
            .or_else(|| self.cfg.schema.clone())
            .or_else(|| self.cfg.data.test.as_deref().map(default_schema_path))
            .ok_or_else(|| Usage("missing --schema (or schema in the config)".into()))?;
        let schema = TypeInventory::load(&schema_path)?;
        let out = self.out_dir(&a.common)?;
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let preds: Vec<PredictionSet> = run
            .records
            .iter()
            .filter_map(|r| r.response.as_ref().map(|raw| parse_prediction(raw, &schema).with_doc_id(&r.doc_id)))
            .collect();
        for p in &preds {
            let key = match p.status {
                ParseStatus::Clean => "clean",
                ParseStatus::Recovered => "recovered",
                ParseStatus::Failed => "failed",
            };
            *counts.entry(key).or_insert(0) += 1;
        }
        let path = out.join("predictions.jsonl");
        write_lines(&path, &preds)?;
        self.record(
            &out,
            "parse",
            json!({"run": a.run, "run_id": run.header.run_id, "schema": schema_path, "statuses": counts}),
            &[&path],
        )?;
        println!(
            "parsed {} responses ({} clean, {} recovered, {} failed; {} errored requests skipped) into {}",
            preds.len(),
            counts.get("clean").unwrap_or(&0),
            counts.get("recovered").unwrap_or(&0),
            counts.get("failed").unwrap_or(&0),
            run.error_count(),
            path.display()
        );
        Ok(())
    }

    fn score(&self, a: ScoreArgs) -> Result<()> {
        let gold_path = require(a.gold, self.cfg.data.test.as_ref(), "--gold (or data.test in the config)")?;
        let gold = self.corpus(&gold_path, &a.common, split_of(&gold_path, Split::Test))?;
        let preds = read_predictions(&a.pred)?;
        let report = score_with(&gold, &preds, a.ec_unit.into())?;
        print!("{}", report.table());
        if a.common.out.is_some() || self.cfg.out_dir.is_some() {
            let out = self.out_dir(&a.common)?;
            let path = out.join("score.json");
            write_json(&path, &report)?;
            self.record(&out, "score", json!({"gold": gold_path, "pred": a.pred, "ec_unit": report_unit(a.ec_unit)}), &[&path])?;
        }
        Ok(())
    }

    fn complexity(&self, a: ComplexityArgs) -> Result<()> {
        if let Some(v) = a.from_table {
            let c = complexity_from_metrics(v[0], v[1], v[2], v[3])?;
            println!("{c:.2}");
            return Ok(());
        }
        let data = require(a.data, None, "--data")?;
        let corpus = self.corpus(&data, &a.common, split_of(&data, Split::Train))?;
        let report = complexity_from_corpus(&corpus)?;
        print!("{}", report.table());
        if a.common.out.is_some() || self.cfg.out_dir.is_some() {
            let out = self.out_dir(&a.common)?;
            let path = out.join(format!("{}.complexity.json", corpus.name));
            write_json(&path, &report)?;
            self.record(&out, "complexity", json!({"data": data}), &[&path])?;
        }
        Ok(())
    }

    fn ablate(&self, a: AblateArgs) -> Result<()> {
        let data = require(a.data, self.cfg.data.test.as_ref(), "--data (or data.test in the config)")?;
        let corpus = self.corpus(&data, &a.common, split_of(&data, Split::Test))?;
        let section = self.cfg.ablation.as_ref();
        let cfg = self.provider(section.map(|s| &s.provider), &a.provider)?;
        let max_attempts = a.max_attempts.or(section.and_then(|s| s.max_attempts)).unwrap_or(DEFAULT_MAX_ATTEMPTS);
        let out = self.out_dir(&a.common)?;
        let provider = HttpChatProvider::from_config(&cfg)?;
        let result = ablate_corpus(&corpus, &provider, ABLATION_SYSTEM_PROMPT, max_attempts, &cfg.sampling(), cfg.concurrency)?;

        let dir = out.join("ablated");
        fs::create_dir_all(&dir)?;
        let corpus_path = dir.join(data.file_name().unwrap_or("test.jsonl".as_ref()));
        result.corpus.write_jsonl(&corpus_path)?;
        let types_path = dir.join("types.txt");
        corpus.type_inventory.write(&types_path)?;
        let results_path = out.join("ablation.results.jsonl");
        write_lines(&results_path, &result.results)?;
        let exhausted: Vec<&str> = result.exhausted().map(|r| r.doc_id.as_str()).collect();
        self.record(
            &out,
            "ablate",
            json!({"data": data, "model": cfg.model, "max_attempts": max_attempts, "exhausted": exhausted}),
            &[&corpus_path, &types_path, &results_path],
        )?;
        let accepted = result.results.iter().filter(|r| r.status == AblationStatus::Accepted).count();
        println!("accepted {accepted} of {} documents; exhausted: {}", result.results.len(), exhausted.len());
        for id in exhausted {
            println!("  exhausted {id}");
        }
        Ok(())
    }
}

fn report_unit(u: EcUnitArg) -> &'static str {
    match u {
        EcUnitArg::Mention => "mention",
        EcUnitArg::DocumentSet => "document_set",
    }
}

fn read_predictions(path: &Path) -> Result<BTreeMap<String, PredictionSet>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionSet = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.insert(p.doc_id.clone(), p);
    }
    Ok(out)
}

struct PromptSetup {
    mode: PromptMode,
    seed: u64,
    test_path: PathBuf,
    train: Corpus,
    test: Corpus,
    config: PromptConfig,
    embedder: Option<Box<dyn Embedder>>,
    index: Option<EmbeddingIndex>,
}

impl PromptSetup {
    fn build(&self, doc: &scg_core::ingest::AnnotatedDocument) -> scg_core::Result<scg_core::prompting::PromptSpec> {
        let selector = match (self.mode, &self.index, &self.embedder) {
            (PromptMode::SixShotRag, Some(index), Some(embedder)) => ExampleSelector::Retrieval {
                index,
                embedder: embedder.as_ref(),
            },
            (PromptMode::SixShot, _, _) => ExampleSelector::Random { seed: self.seed },
            _ => ExampleSelector::None,
        };
        build_prompt(self.mode, doc, &self.train, &self.test.type_inventory, &selector, &self.config)
    }

    fn params(&self) -> Value {
        json!({
            "mode": self.mode,
            "seed": self.seed,
            "test": self.test_path,
            "train_corpus": self.train.name,
            "example_order": self.config.example_order,
            "embedding_dim": self.embedder.as_ref().map(|e| e.dimension()),
        })
    }
}
