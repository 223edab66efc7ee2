//! Run configuration: a TOML file with one table per pipeline stage.
//!
//! ```toml
//! seed = 7
//! workers = 0            # 0 uses every available core
//!
//! [ingest]
//! min_count = 1
//! max_vocab = 2000
//!
//! [dedup]                # near-duplicate detection
//! perms = 256
//! bands = 32
//! rows = 8
//!
//! [filter]
//! tau = 0.6
//! min_hits = 2
//!
//! [curriculum]
//! e1 = 0.3
//! e2 = 0.8
//! eta = 0.5
//!
//! [curriculum.targets]
//! seed = 0.3
//! web = 0.1
//!
//! [model]
//! d_model = 64
//!
//! [train.mlm]
//! learning_rate = 5e-5
//! max_steps = 2000
//!
//! [eval]
//! k2 = 10
//! ```
//!
//! Every key is optional; unknown keys are rejected. Command-line flags
//! override file values.

use std::path::Path;

use forge_core::curriculum::CurriculumConfig;
use forge_core::dedup::DedupConfig;
use forge_core::encoder::{EncoderConfig, TrainConfig};
use forge_core::evalset::EvalCounts;
use forge_core::masking::MaskingConfig;
use forge_core::seed::sha256_hex;
use forge_core::{ForgeError, Result};
use serde::{Deserialize, Serialize};

use crate::synth::SynthSpec;

pub const CONFIG_ENV: &str = "FORGE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    pub min_count: usize,
    pub max_vocab: usize,
    /// Encoder sequence length used by every downstream stage.
    pub max_len: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { min_count: 1, max_vocab: 30_000, max_len: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub tau: f64,
    pub min_hits: usize,
    /// Laplace smoothing of the relevance classifier.
    pub alpha: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { tau: 0.6, min_hits: 2, alpha: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Held-out documents per category for perplexity feedback.
    pub held_out_per_category: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { held_out_per_category: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    /// InfoNCE temperature.
    pub tau: f64,
    pub hard_negatives: usize,
    /// Steps between hard-negative refreshes; 0 refreshes once per epoch.
    pub refresh_every: usize,
    /// Share of training pairs held out for early stopping.
    pub validation_fraction: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { tau: 0.05, hard_negatives: 3, refresh_every: 0, validation_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSections {
    pub mlm: TrainConfig,
    pub bi: TrainConfig,
    pub cross: TrainConfig,
    pub ner: TrainConfig,
    pub vuln: TrainConfig,
}

impl Default for TrainSections {
    fn default() -> Self {
        Self {
            mlm: TrainConfig::mlm(),
            bi: TrainConfig::retrieval(),
            cross: TrainConfig::retrieval(),
            ner: TrainConfig::ner(),
            vuln: TrainConfig::vuln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub counts: EvalCounts,
    /// Stage-one depth; 0 ranks the full corpus.
    pub k1: usize,
    pub k2: usize,
    /// Share of fine-tuning examples held out for early stopping.
    pub validation_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { counts: EvalCounts { nouns: 200, verbs: 200, code: 150 }, k1: 0, k2: 10, validation_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub ingest: IngestConfig,
    pub dedup: DedupConfig,
    pub filter: FilterConfig,
    pub curriculum: CurriculumConfig,
    pub masking: MaskingConfig,
    pub model: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub retrieval: RetrievalConfig,
    pub train: TrainSections,
    pub eval: EvalConfig,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            workers: 0,
            ingest: IngestConfig::default(),
            dedup: DedupConfig::default(),
            filter: FilterConfig::default(),
            curriculum: CurriculumConfig::default(),
            masking: MaskingConfig::default(),
            model: EncoderConfig { vocab_size: 0, ..EncoderConfig::default() },
            pretrain: PretrainConfig::default(),
            retrieval: RetrievalConfig::default(),
            train: TrainSections::default(),
            eval: EvalConfig::default(),
            synth: SynthSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ForgeError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, else the file named by `FORGE_CONFIG`, else defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        Self::load_with(path, &[])
    }

    /// Like [`RunConfig::load`], then applies `dotted.key=value` overrides.
    /// Values are parsed as TOML and fall back to plain strings.
    pub fn load_with(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let env = std::env::var_os(CONFIG_ENV).map(std::path::PathBuf::from);
        let text = match path.map(Path::to_path_buf).or(env) {
            Some(p) => std::fs::read_to_string(&p)
                .map_err(|e| ForgeError::Config(format!("cannot read config file {}: {e}", p.display())))?,
            None => String::new(),
        };
        if overrides.is_empty() {
            return Self::from_toml_str(&text);
        }
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| ForgeError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let merged = toml::to_string(&table).map_err(|e| ForgeError::Config(e.to_string()))?;
        Self::from_toml_str(&merged)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ingest.min_count < 1 {
            return Err(ForgeError::Config("ingest.min_count must be at least 1".into()));
        }
        if self.ingest.max_len < 4 {
            return Err(ForgeError::Config("ingest.max_len must be at least 4".into()));
        }
        self.dedup.validate()?;
        if !(0.0..=1.0).contains(&self.filter.tau) {
            return Err(ForgeError::Config(format!("filter.tau must lie in [0, 1], got {}", self.filter.tau)));
        }
        if !(self.filter.alpha > 0.0) {
            return Err(ForgeError::Config("filter.alpha must be positive".into()));
        }
        self.curriculum.schedule.validate()?;
        self.masking.validate()?;
        for (name, t) in self.train_sections() {
            t.validate().map_err(|e| ForgeError::Config(format!("train.{name}: {e}")))?;
        }
        if !(self.retrieval.tau > 0.0) {
            return Err(ForgeError::Config("retrieval.tau must be positive".into()));
        }
        for (name, f) in [("retrieval", self.retrieval.validation_fraction), ("eval", self.eval.validation_fraction)] {
            if !(0.0..0.5).contains(&f) {
                return Err(ForgeError::Config(format!("{name}.validation_fraction must lie in [0, 0.5)")));
            }
        }
        if self.eval.k2 == 0 || (self.eval.k1 != 0 && self.eval.k2 > self.eval.k1) {
            return Err(ForgeError::Config(format!("need 1 <= k2 <= k1, got k1 = {}, k2 = {}", self.eval.k1, self.eval.k2)));
        }
        self.synth.validate()?;
        Ok(())
    }

    pub fn train_sections(&self) -> [(&'static str, &TrainConfig); 5] {
        let t = &self.train;
        [("mlm", &t.mlm), ("bi", &t.bi), ("cross", &t.cross), ("ner", &t.ner), ("vuln", &t.vuln)]
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ForgeError::Config(e.to_string()))
    }

    /// Hash of the canonical JSON form; identical settings hash identically
    /// however the file was written. The worker count is left out since
    /// results do not depend on it.
    pub fn hash(&self) -> Result<String> {
        let canonical = RunConfig { workers: 0, ..self.clone() };
        Ok(sha256_hex(serde_json::to_string(&canonical)?.as_bytes()))
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| ForgeError::Config(format!("override `{item}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ForgeError::Config(format!("override `{item}` has an empty key segment")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let mut cur = table;
    for seg in &path[..path.len() - 1] {
        let entry = cur.entry(seg.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ForgeError::Config(format!("override `{key}`: `{seg}` is not a table")))?;
    }
    cur.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}
