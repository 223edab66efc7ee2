//! Subcommands: file IO, run manifests and progress logging around the stages.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use forge_core::corpus::{read_corpus, read_jsonl, write_jsonl, Document};
use forge_core::encoder::{read_checkpoint, write_checkpoint, EncoderParams, StepRecord, TrainOutcome};
use forge_core::evalset::AnnotatedDoc;
use forge_core::filter::LabeledSeed;
use forge_core::ingest::Tokenizer;
use forge_core::retrieval::{read_qrels, retrieve_all, two_stage_all, CrossEncoderScorer, EmbeddingIndex, RankedList};
use forge_core::seed::sha256_hex;
use forge_core::{ForgeError, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::stages;
use crate::synth::{generate_synthetic, LabeledPair, NerExample, Query, TrainPair, VulnExample};

#[derive(Debug, Parser)]
#[command(name = "forge", version, about = "Corpus curation, encoder pretraining, fine-tuning and evaluation")]
pub struct Cli {
    /// TOML run configuration; falls back to $FORGE_CONFIG, then built-in defaults.
    #[arg(long, global = true, env = "FORGE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores). Outputs do not depend on this.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Overrides one config value, e.g. `--set train.mlm.max_steps=500`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Emit progress as JSON lines on stderr.
    #[arg(long, global = true)]
    pub json_logs: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus and every labeled fixture into a directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalize documents, record token counts and build the vocabulary.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Vocabulary output; defaults to `vocab.txt` beside `--out`.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Drop near-duplicate documents.
    Dedup(InOut),
    /// Keep domain-relevant documents.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        /// Labeled seed documents for the relevance classifier.
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the corpus manifest.
    Stats(InOut),
    /// Masked-language-model pretraining with the sampling curriculum.
    Pretrain {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Contrastive bi-encoder fine-tuning on query/document pairs
    #[command(name = "finetune-bi")]
    FinetuneBi {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise cross-encoder fine-tuning on labeled query/document pairs
    #[command(name = "finetune-cross")]
    FinetuneCross {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Token-classification fine-tuning for entity tagging
    #[command(name = "finetune-ner")]
    FinetuneNer {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sequence-classification fine-tuning for vulnerable code
    #[command(name = "finetune-vuln")]
    FinetuneVuln {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-n masked prediction table over generated eval records.
    #[command(name = "eval-mlm")]
    EvalMlm {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        eval_docs: PathBuf,
        /// Pretraining corpus; eval documents must not appear in it.
        #[arg(long)]
        train_corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bi-encoder table, plus the two-stage table when `--cross` is given.
    #[command(name = "eval-retrieval")]
    EvalRetrieval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        cross: Option<PathBuf>,
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Token- and span-level entity tagging table
    #[command(name = "eval-ner")]
    EvalNer {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        test: PathBuf,
        /// Training set to check for id overlap.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Vulnerability classification table
    #[command(name = "eval-vuln")]
    EvalVuln {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed a document collection into an exact-search index.
    Index {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank indexed documents for each query, optionally reranking with a cross-encoder.
    Retrieve {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        cross: Option<PathBuf>,
        /// Documents for the cross-encoder; required with `--cross`.
        #[arg(long)]
        docs: Option<PathBuf>,
        /// Stage-one depth when reranking.
        #[arg(long, default_value_t = 100)]
        k1: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct InOut {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Encoder checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Ingest { .. } => "ingest",
            Command::Dedup(_) => "dedup",
            Command::Filter { .. } => "filter",
            Command::Stats(_) => "stats",
            Command::Pretrain { .. } => "pretrain",
            Command::FinetuneBi { .. } => "finetune-bi",
            Command::FinetuneCross { .. } => "finetune-cross",
            Command::FinetuneNer { .. } => "finetune-ner",
            Command::FinetuneVuln { .. } => "finetune-vuln",
            Command::EvalMlm { .. } => "eval-mlm",
            Command::EvalRetrieval { .. } => "eval-retrieval",
            Command::EvalNer { .. } => "eval-ner",
            Command::EvalVuln { .. } => "eval-vuln",
            Command::Index { .. } => "index",
            Command::Retrieve { .. } => "retrieve",
        }
    }
}

/// Exit status for each error class.
pub fn exit_code(err: &ForgeError) -> i32 {
    match err {
        ForgeError::Config(_) => 2,
        ForgeError::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 3,
        ForgeError::Divergence { .. } | ForgeError::NonFinite(_) => 4,
        ForgeError::ProtocolViolation(_) => 5,
        _ => 1,
    }
}

/// Written beside every artifact as `<artifact>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// File name to sha256 of each input.
    pub inputs: BTreeMap<String, String>,
    /// File name to sha256 of each artifact written.
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub summary: serde_json::Value,
    /// Wall-clock seconds per stage.
    pub durations: BTreeMap<String, f64>,
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn file_key(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

fn sibling(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => Ok(std::fs::create_dir_all(p)?),
        _ => Ok(()),
    }
}

struct Run {
    command: &'static str,
    json_logs: bool,
    started: Instant,
    lap: Instant,
    manifest: RunManifest,
}

impl Run {
    fn new(cfg: &RunConfig, command: &'static str, json_logs: bool) -> Result<Self> {
        Ok(Self {
            command,
            json_logs,
            started: Instant::now(),
            lap: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                config_hash: cfg.hash()?,
                seed: cfg.seed,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                summary: serde_json::Value::Null,
                durations: BTreeMap::new(),
            },
        })
    }

    /// Hashes an input, failing with a not-found error naming the path.
    fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| {
            ForgeError::Io(std::io::Error::new(e.kind(), format!("input {}: {e}", path.display())))
        })?;
        self.manifest.inputs.insert(file_key(path), sha256_hex(&bytes));
        Ok(())
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.manifest.outputs.insert(file_key(path), sha256_hex(&bytes));
        Ok(())
    }

    fn stage(&mut self, name: &str) {
        self.manifest.durations.insert(name.to_string(), self.lap.elapsed().as_secs_f64());
        self.lap = Instant::now();
    }

    fn count(&self, what: &str, n: usize) {
        let elapsed = self.started.elapsed().as_secs_f64();
        if self.json_logs {
            eprintln!("{}", json!({"stage": self.command, "event": what, "count": n, "elapsed": elapsed}));
        } else {
            eprintln!("[{}] {what}: {n} ({elapsed:.1}s)", self.command);
        }
    }

    fn step_logger(&self) -> impl FnMut(&StepRecord) + 'static {
        let json_logs = self.json_logs;
        let started = self.started;
        let command = self.command;
        move |r: &StepRecord| {
            let elapsed = started.elapsed().as_secs_f64();
            if json_logs {
                eprintln!(
                    "{}",
                    json!({"stage": command, "task": r.task, "step": r.step, "loss": r.loss, "lr": r.lr, "elapsed": elapsed})
                );
            } else if r.step % 100 == 0 {
                eprintln!("[{command}] step {} loss {:.4} lr {:.2e} ({elapsed:.1}s)", r.step, r.loss, r.lr);
            }
        }
    }

    fn finish(mut self, anchor: &Path) -> Result<()> {
        self.manifest.durations.insert("total".into(), self.started.elapsed().as_secs_f64());
        let path = manifest_path(anchor);
        write_json(&path, &self.manifest)?;
        if self.json_logs {
            eprintln!("{}", json!({"stage": self.command, "event": "done", "manifest": path.display().to_string()}));
        }
        let _ = std::io::stderr().flush();
        Ok(())
    }
}

fn load_model(run: &mut Run, m: &ModelArgs) -> Result<(EncoderParams, Tokenizer)> {
    run.input(&m.model)?;
    run.input(&m.vocab)?;
    let (params, header) = read_checkpoint(&m.model)?;
    let tok = Tokenizer::read_vocab(&m.vocab)?;
    if header.vocab_hash != tok.vocab_hash() {
        return Err(ForgeError::Input(format!(
            "checkpoint {} was trained with a different vocabulary than {}",
            m.model.display(),
            m.vocab.display()
        )));
    }
    Ok((params, tok))
}

fn save_model(run: &mut Run, out: &Path, params: &EncoderParams, tok: &Tokenizer, outcome: &TrainOutcome) -> Result<()> {
    ensure_parent(out)?;
    write_checkpoint(out, params, &tok.vocab_hash())?;
    run.output(out)?;
    let log = sibling(out, ".train.json");
    write_json(&log, outcome)?;
    run.output(&log)?;
    run.manifest.summary = json!({
        "steps": outcome.steps,
        "best_step": outcome.best_step,
        "stopped_early": outcome.stopped_early,
        "final_loss": outcome.trace.last().map(|r| r.loss),
    });
    Ok(())
}

fn ids_of<'a>(items: impl IntoIterator<Item = &'a str>) -> Vec<&'a str> {
    items.into_iter().collect()
}

/// Loads configuration (file, then `--seed`/`--workers`/`--set` overrides).
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load_with(cli.config.as_deref(), &cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run_command(cfg: &RunConfig, command: &Command, json_logs: bool) -> Result<()> {
    let mut run = Run::new(cfg, command.name(), json_logs)?;
    match command {
        Command::Synth { out } => {
            std::fs::create_dir_all(out)?;
            let mut spec = cfg.synth.clone();
            spec.seed = cfg.seed;
            let data = generate_synthetic(&spec)?;
            run.stage("generate");
            for name in data.write(out)? {
                run.output(&out.join(name))?;
            }
            run.manifest.summary = json!({
                "corpus_docs": data.corpus.len(),
                "planted_duplicates": data.duplicates.len(),
                "retrieval_queries": data.retrieval.queries.len(),
                "adversarial_queries": data.adversarial.queries.len(),
            });
            run.count("documents", data.corpus.len());
            run.stage("write");
            run.finish(&out.join("synth"))
        }
        Command::Ingest { input, out, vocab } => {
            run.input(input)?;
            let raw = read_corpus(input)?;
            let (docs, report) = stages::ingest_documents(raw);
            let tok = stages::ingest_vocab(&docs, cfg)?;
            run.stage("normalize");
            ensure_parent(out)?;
            write_jsonl(out, &docs)?;
            run.output(out)?;
            let vocab = vocab.clone().unwrap_or_else(|| out.with_file_name("vocab.txt"));
            tok.write_vocab(&vocab)?;
            run.output(&vocab)?;
            run.manifest.summary = json!({"documents": docs.len(), "vocab_size": tok.vocab_size(), "normalize": report});
            run.count("documents", docs.len());
            run.finish(out)
        }
        Command::Dedup(io) => {
            run.input(&io.input)?;
            let mut docs = read_corpus(&io.input)?;
            stages::with_token_counts(&mut docs);
            let res = stages::dedup_stage(&docs, cfg)?;
            run.stage("dedup");
            ensure_parent(&io.out)?;
            write_jsonl(&io.out, &res.kept)?;
            run.output(&io.out)?;
            let drops = sibling(&io.out, ".drops.jsonl");
            write_jsonl(&drops, &res.report)?;
            run.output(&drops)?;
            run.manifest.summary = json!({
                "input": docs.len(), "kept": res.kept.len(), "dropped": res.report.len(),
                "candidate_pairs": res.candidate_pairs, "unshingleable": res.unshingleable,
            });
            run.count("kept", res.kept.len());
            run.finish(&io.out)
        }
        Command::Filter { input, lexicon, seeds, out } => {
            for p in [input, lexicon, seeds] {
                run.input(p)?;
            }
            let mut docs = read_corpus(input)?;
            stages::with_token_counts(&mut docs);
            let terms: Vec<String> =
                std::fs::read_to_string(lexicon)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
            let seeds: Vec<LabeledSeed> = read_jsonl(seeds)?;
            let res = stages::filter_stage(&docs, &terms, &seeds, cfg)?;
            run.stage("filter");
            ensure_parent(out)?;
            write_jsonl(out, &res.kept)?;
            run.output(out)?;
            let drops = sibling(out, ".drops.jsonl");
            write_jsonl(&drops, &res.report)?;
            run.output(&drops)?;
            run.manifest.summary = json!({"input": docs.len(), "kept": res.kept.len(), "dropped": res.report.len()});
            run.count("kept", res.kept.len());
            run.finish(out)
        }
        Command::Stats(io) => {
            run.input(&io.input)?;
            let mut docs = read_corpus(&io.input)?;
            stages::with_token_counts(&mut docs);
            let m = stages::stats_stage(&docs, &Tokenizer::from_vocab(Vec::new()).version(), &BTreeMap::new())?;
            ensure_parent(&io.out)?;
            write_json(&io.out, &m)?;
            run.output(&io.out)?;
            run.count("documents", docs.len());
            run.finish(&io.out)
        }
        Command::Pretrain { input, vocab, out } => {
            run.input(input)?;
            run.input(vocab)?;
            let mut docs = read_corpus(input)?;
            stages::with_token_counts(&mut docs);
            let tok = Tokenizer::read_vocab(vocab)?;
            let mut log = run.step_logger();
            let res = stages::pretrain_stage(&docs, &tok, cfg, &mut log)?;
            run.stage("train");
            save_model(&mut run, out, &res.params, &tok, &res.outcome)?;
            let trace = sibling(out, ".curriculum.json");
            write_json(&trace, &json!({"held_out": res.held_out_ids, "trace": res.curriculum}))?;
            run.output(&trace)?;
            run.finish(out)
        }
        Command::FinetuneBi { model, docs, pairs, out } => {
            let (params, tok) = load_model(&mut run, model)?;
            run.input(docs)?;
            run.input(pairs)?;
            let docs = read_corpus(docs)?;
            let pairs: Vec<TrainPair> = read_jsonl(pairs)?;
            let mut log = run.step_logger();
            let (p, outcome) = stages::finetune_bi(&params, &tok, &docs, &pairs, cfg, &mut log)?;
            run.stage("train");
            save_model(&mut run, out, &p, &tok, &outcome)?;
            run.finish(out)
        }
        Command::FinetuneCross { model, pairs, out } => {
            let (params, tok) = load_model(&mut run, model)?;
            run.input(pairs)?;
            let pairs: Vec<LabeledPair> = read_jsonl(pairs)?;
            let mut log = run.step_logger();
            let (p, outcome) = stages::finetune_cross(&params, &tok, &pairs, cfg, &mut log)?;
            run.stage("train");
            save_model(&mut run, out, &p, &tok, &outcome)?;
            run.finish(out)
        }
        Command::FinetuneNer { model, train, out } => {
            let (params, tok) = load_model(&mut run, model)?;
            run.input(train)?;
            let train: Vec<NerExample> = read_jsonl(train)?;
            let mut log = run.step_logger();
            let (p, outcome) = stages::finetune_ner(&params, &tok, &train, cfg, &mut log)?;
            run.stage("train");
            save_model(&mut run, out, &p, &tok, &outcome)?;
            run.finish(out)
        }
        Command::FinetuneVuln { model, train, out } => {
            let (params, tok) = load_model(&mut run, model)?;
            run.input(train)?;
            let train: Vec<VulnExample> = read_jsonl(train)?;
            let mut log = run.step_logger();
            let (p, outcome) = stages::finetune_vuln(&params, &tok, &train, cfg, &mut log)?;
            run.stage("train");
            save_model(&mut run, out, &p, &tok, &outcome)?;
            run.finish(out)
        }
        Command::EvalMlm { model, eval_docs, train_corpus, out } => {
            let (params, tok) = load_model(&mut run, model)?;
            run.input(eval_docs)?;
            run.input(train_corpus)?;
            let eval: Vec<AnnotatedDoc> = read_jsonl(eval_docs)?;
            let train = read_corpus(train_corpus)?;
            stages::check_disjoint(
                ids_of(train.iter().map(|d| d.id.as_str())),
                ids_of(eval.iter().map(|d| d.doc.id.as_str())),
                "eval-mlm",
            )?;
            let training_ids: BTreeSet<String> = train.iter().map(|d| d.id.clone()).collect();
            let (report, records) = stages::eval_mlm(&params, &tok, &eval, &training_ids, cfg)?;
            run.stage("evaluate");
            ensure_parent(out)?;
            write_json(out, &report)?;
            run.output(out)?;
            let rec = sibling(out, ".records.jsonl");
            write_jsonl(&rec, &records)?;
            run.output(&rec)?;
            run.count("records", records.len());
            run.finish(out)
        }
        Command::EvalRetrieval { model, cross, docs, queries, qrels, out } => {
            let (bi, tok) = load_model(&mut run, model)?;
            let cross_params = match cross {
                Some(c) => {
                    run.input(c)?;
                    let (p, h) = read_checkpoint(c)?;
                    if h.vocab_hash != tok.vocab_hash() {
                        return Err(ForgeError::Input(format!("cross-encoder {} uses a different vocabulary", c.display())));
                    }
                    Some(p)
                }
                None => None,
            };
            for p in [docs, queries, qrels] {
                run.input(p)?;
            }
            let docs = read_corpus(docs)?;
            let queries: Vec<Query> = read_jsonl(queries)?;
            let qrels = read_qrels(qrels)?;
            let hash = run.manifest.inputs[&file_key(&model.model)].clone();
            let index = EmbeddingIndex::build(&bi, &stages::doc_sequences(&tok, &docs, bi.config.max_len), &hash)?;
            run.stage("index");
            let report = stages::eval_retrieval(&bi, cross_params.as_ref(), &tok, &index, &docs, &queries, &qrels, cfg)?;
            run.stage("evaluate");
            ensure_parent(out)?;
            write_json(out, &report)?;
            run.output(out)?;
            run.count("queries", queries.len());
            run.finish(out)
        }
        Command::EvalNer { model, test, train, out } => {
            let (params, tok) = load_model(&mut run, model)?;
            run.input(test)?;
            let test: Vec<NerExample> = read_jsonl(test)?;
            if let Some(t) = train {
                run.input(t)?;
                let train: Vec<NerExample> = read_jsonl(t)?;
                stages::check_disjoint(ids_of(train.iter().map(|e| e.id.as_str())), ids_of(test.iter().map(|e| e.id.as_str())), "eval-ner")?;
            }
            let table = stages::eval_ner(&params, &tok, &test)?;
            run.stage("evaluate");
            ensure_parent(out)?;
            write_json(out, &table)?;
            run.output(out)?;
            run.count("sentences", test.len());
            run.finish(out)
        }
        Command::EvalVuln { model, test, train, out } => {
            let (params, tok) = load_model(&mut run, model)?;
            run.input(test)?;
            let test: Vec<VulnExample> = read_jsonl(test)?;
            if let Some(t) = train {
                run.input(t)?;
                let train: Vec<VulnExample> = read_jsonl(t)?;
                stages::check_disjoint(ids_of(train.iter().map(|e| e.id.as_str())), ids_of(test.iter().map(|e| e.id.as_str())), "eval-vuln")?;
            }
            let report = stages::eval_vuln(&params, &tok, &test)?;
            run.stage("evaluate");
            ensure_parent(out)?;
            write_json(out, &report)?;
            run.output(out)?;
            run.count("functions", test.len());
            run.finish(out)
        }
        Command::Index { model, docs, out } => {
            let (bi, tok) = load_model(&mut run, model)?;
            run.input(docs)?;
            let docs = read_corpus(docs)?;
            let hash = run.manifest.inputs[&file_key(&model.model)].clone();
            let index = EmbeddingIndex::build(&bi, &stages::doc_sequences(&tok, &docs, bi.config.max_len), &hash)?;
            run.stage("index");
            ensure_parent(out)?;
            index.write(out)?;
            run.output(out)?;
            run.count("documents", index.len());
            run.finish(out)
        }
        Command::Retrieve { model, index, queries, cross, docs, k1, k, out } => {
            let (bi, tok) = load_model(&mut run, model)?;
            run.input(index)?;
            run.input(queries)?;
            let idx = EmbeddingIndex::read(index)?;
            if idx.checkpoint_hash != run.manifest.inputs[&file_key(&model.model)] {
                return Err(ForgeError::Input(format!("index {} was built with a different checkpoint", index.display())));
            }
            let q = stages::query_ids(&tok, &read_jsonl::<Query>(queries)?);
            let lists: BTreeMap<String, RankedList> = match cross {
                None => retrieve_all(&idx, &bi, &q, *k)?,
                Some(c) => {
                    let docs_path = docs
                        .as_ref()
                        .ok_or_else(|| ForgeError::Config("--cross needs --docs for document text".into()))?;
                    run.input(c)?;
                    run.input(docs_path)?;
                    let (cp, _) = read_checkpoint(c)?;
                    let docs: Vec<Document> = read_corpus(docs_path)?;
                    let content: BTreeMap<String, Vec<u32>> =
                        docs.iter().map(|d| (d.id.clone(), stages::content_ids(&tok, &d.content, d.modality))).collect();
                    let scorer = CrossEncoderScorer { params: &cp, docs: &content, max_len: stages::seq_len(&cp.config, &cfg.train.cross) };
                    let k1 = (*k1).min(idx.len());
                    two_stage_all(&idx, &bi, &scorer, &q, k1, (*k).min(k1))?.into_iter().map(|(id, r)| (id, r.reranked)).collect()
                }
            };
            run.stage("retrieve");
            let rows: Vec<serde_json::Value> = lists.iter().map(|(id, l)| json!({"query_id": id, "results": l.entries})).collect();
            ensure_parent(out)?;
            write_jsonl(out, &rows)?;
            run.output(out)?;
            run.count("queries", rows.len());
            run.finish(out)
        }
    }
}
