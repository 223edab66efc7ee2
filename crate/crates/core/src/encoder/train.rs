//! Training loop and task objectives.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::heads::{mine_hard_negatives, ContrastiveBatch};
use super::optim::{adamw_step, clip_grad_norm, lr_at, AdamState, LrSchedule};
use super::params::EncoderParams;
use crate::corpus::{Category, Document, Modality};
use crate::curriculum::{
    phase_of, sample_batch, source_weights, CurriculumConfig, CurriculumTrace, Phase, PerplexityStats,
};
use crate::error::{ForgeError, Result};
use crate::filter::BalancePlan;
use crate::ingest::{TokenSequence, Tokenizer};
use crate::lexer::{align, lex_code, Lexed};
use crate::masking::{mask_code, mask_dynamic, MaskedExample, MaskingConfig};
use crate::seed::{derive_indexed, rng_from};

/// One line of the loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub task: String,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub steps: usize,
    pub trace: Vec<StepRecord>,
    /// `(step, validation loss)` after each validation round.
    pub validation: Vec<(usize, f64)>,
    pub best_step: Option<usize>,
    pub stopped_early: bool,
}

pub trait Objective {
    fn task(&self) -> &'static str;
    fn steps_per_epoch(&self) -> usize;
    /// Loss and gradient for the batch served at `step` of `total`.
    fn batch_loss(&mut self, params: &EncoderParams, step: usize, total: usize) -> Result<(f64, EncoderParams)>;
    fn validation_loss(&mut self, _params: &EncoderParams) -> Option<Result<f64>> {
        None
    }
}

/// sample, forward, loss, clip, AdamW, schedule. With validation data the
/// best parameters are restored at the end and training stops after
/// `patience` rounds without improvement.
pub fn train(
    params: &mut EncoderParams,
    objective: &mut dyn Objective,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spe = objective.steps_per_epoch().max(1);
    let total = cfg.total_steps(spe);
    let mut out = TrainOutcome::default();
    if total == 0 {
        return Ok(out);
    }
    let schedule = LrSchedule::from_config(cfg, total)?;
    let mut adam = AdamState::new(params);
    let eval_every = if cfg.eval_every > 0 { cfg.eval_every } else { spe };
    let mut best: Option<(f64, EncoderParams)> = None;
    let mut bad_rounds = 0;
    for step in 0..total {
        let (loss, mut grads) = objective.batch_loss(params, step, total)?;
        if !loss.is_finite() {
            return Err(ForgeError::Divergence { step, loss });
        }
        clip_grad_norm(&mut grads, cfg.grad_clip_norm)?;
        let (lr, _) = lr_at(step + 1, &schedule);
        adamw_step(params, &grads, &mut adam, lr, cfg)?;
        let rec = StepRecord { step, task: objective.task().to_string(), loss, lr };
        on_step(&rec);
        out.trace.push(rec);
        out.steps = step + 1;
        if (step + 1) % eval_every == 0 || step + 1 == total {
            if let Some(v) = objective.validation_loss(params) {
                let v = v?;
                if !v.is_finite() {
                    return Err(ForgeError::Divergence { step, loss: v });
                }
                out.validation.push((step, v));
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, params.clone()));
                    out.best_step = Some(step);
                    bad_rounds = 0;
                } else {
                    bad_rounds += 1;
                    if bad_rounds >= cfg.patience {
                        out.stopped_early = true;
                        break;
                    }
                }
            }
        }
    }
    if let Some((_, p)) = best {
        *params = p;
    }
    Ok(out)
}

/// Index order for `epoch`, reshuffled from a per-epoch seed.
fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(derive_indexed(seed, "epoch", epoch as u64)));
    order
}

/// Items of the batch served at `step` with a fixed batch size.
fn batch_indices(n: usize, batch: usize, seed: u64, step: usize, cached: &mut Option<(usize, Vec<usize>)>) -> Vec<usize> {
    let spe = n.div_ceil(batch).max(1);
    let epoch = step / spe;
    if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
        *cached = Some((epoch, epoch_order(n, seed, epoch)));
    }
    let order = &cached.as_ref().expect("just filled").1;
    let start = (step % spe) * batch;
    order[start..(start + batch).min(n)].to_vec()
}

// ---------------------------------------------------------------- MLM

/// A training document encoded once, with lexer units for code.
#[derive(Debug, Clone)]
pub struct PreparedDoc {
    pub id: String,
    pub category: Category,
    pub seq: TokenSequence,
    pub code: Option<(Lexed, Vec<usize>)>,
}

impl PreparedDoc {
    pub fn new(doc: &Document, tokenizer: &Tokenizer, max_len: usize) -> Result<Self> {
        let toks = tokenizer.tokens_for(&doc.content, doc.modality);
        let texts: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
        let seq = tokenizer.encode(&texts, max_len, false)?;
        let code = match doc.modality {
            Modality::Text => None,
            Modality::Code => {
                let lexed = lex_code(&doc.content);
                let al = align(&lexed, &toks)?;
                Some((lexed, al))
            }
        };
        Ok(Self { id: doc.id.clone(), category: doc.source, seq, code })
    }

    pub fn mask(&self, cfg: &MaskingConfig, vocab_size: usize, rng: &mut crate::seed::Rng) -> Result<MaskedExample> {
        match &self.code {
            None => mask_dynamic(&self.seq, cfg, vocab_size, rng),
            Some((lexed, al)) => mask_code(&self.seq, lexed, al, cfg, vocab_size, rng),
        }
    }
}

/// Encodes documents in parallel, dropping those with nothing to mask.
pub fn prepare_docs(docs: &[Document], tokenizer: &Tokenizer, max_len: usize, masking: &MaskingConfig) -> Result<Vec<PreparedDoc>> {
    let all: Vec<Result<PreparedDoc>> = docs.par_iter().map(|d| PreparedDoc::new(d, tokenizer, max_len)).collect();
    let mut out = Vec::with_capacity(all.len());
    for p in all {
        let p = p?;
        let probe = MaskingConfig { mlm_prob: 1.0, ..*masking };
        if p.mask(&probe, tokenizer.vocab_size(), &mut rng_from(0)).is_ok() {
            out.push(p);
        }
    }
    Ok(out)
}

/// Fixed-mask held-out examples grouped by category, for perplexity.
pub fn held_out_examples(
    docs: &[PreparedDoc],
    masking: &MaskingConfig,
    vocab_size: usize,
    seed: u64,
) -> Vec<(Category, MaskedExample)> {
    docs.iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let mut rng = rng_from(derive_indexed(seed, "held-out-mask", i as u64));
            d.mask(masking, vocab_size, &mut rng).ok().filter(|e| !e.masked.is_empty()).map(|e| (d.category, e))
        })
        .collect()
}

/// Per-category perplexity on fixed held-out masks.
pub fn held_out_perplexity(params: &EncoderParams, held_out: &[(Category, MaskedExample)], step: usize) -> Result<PerplexityStats> {
    let lps: Vec<Result<Vec<f64>>> = held_out.par_iter().map(|(_, ex)| params.gold_log_probs(ex)).collect();
    let mut nll: BTreeMap<Category, (f64, usize)> = BTreeMap::new();
    for ((c, _), lp) in held_out.iter().zip(lps) {
        let lp = lp?;
        let e = nll.entry(*c).or_default();
        e.0 -= lp.iter().sum::<f64>();
        e.1 += lp.len();
    }
    Ok(PerplexityStats::from_nll(step, &nll))
}

pub struct MlmObjective {
    pub pools: BTreeMap<Category, Vec<PreparedDoc>>,
    pub plan: BalancePlan,
    pub curriculum: CurriculumConfig,
    pub masking: MaskingConfig,
    pub held_out: Vec<(Category, MaskedExample)>,
    pub batch_size: usize,
    pub vocab_size: usize,
    pub seed: u64,
    pub ppl: Option<PerplexityStats>,
    pub curriculum_trace: Vec<CurriculumTrace>,
}

impl MlmObjective {
    pub fn new(
        train: Vec<PreparedDoc>,
        plan: BalancePlan,
        curriculum: CurriculumConfig,
        masking: MaskingConfig,
        held_out: Vec<(Category, MaskedExample)>,
        batch_size: usize,
        vocab_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut pools: BTreeMap<Category, Vec<PreparedDoc>> = BTreeMap::new();
        for d in train {
            pools.entry(d.category).or_default().push(d);
        }
        if pools.is_empty() {
            return Err(ForgeError::Training("no maskable training documents".into()));
        }
        if let Some(c) = plan.categories().find(|c| !pools.contains_key(c)) {
            return Err(ForgeError::Training(format!("balance plan names `{c}` but no training document has it")));
        }
        Ok(Self { pools, plan, curriculum, masking, held_out, batch_size, vocab_size, seed, ppl: None, curriculum_trace: Vec::new() })
    }

    fn refresh_due(&self, step: usize) -> bool {
        self.ppl.as_ref().is_none_or(|p| step >= p.step + self.curriculum.refresh_every.max(1))
    }
}

impl Objective for MlmObjective {
    fn task(&self) -> &'static str {
        "mlm"
    }

    fn steps_per_epoch(&self) -> usize {
        let n: usize = self.pools.values().map(Vec::len).sum();
        n.div_ceil(self.batch_size.max(1))
    }

    fn batch_loss(&mut self, params: &EncoderParams, step: usize, total: usize) -> Result<(f64, EncoderParams)> {
        let progress = step as f64 / total as f64;
        let phase = phase_of(progress, &self.curriculum.schedule)?;
        let mut refreshed = false;
        if phase == Phase::Mid && !self.held_out.is_empty() && self.refresh_due(step) {
            self.ppl = Some(held_out_perplexity(params, &self.held_out, step)?);
            refreshed = true;
        }
        let weights = source_weights(progress, &self.curriculum, &self.plan, self.ppl.as_ref())?;
        if step == 0 || refreshed || step % self.curriculum.refresh_every.max(1) == 0 {
            self.curriculum_trace.push(CurriculumTrace {
                step,
                progress,
                phase,
                weights: weights.weights.clone(),
                ppl: self.ppl.as_ref().map(|p| p.perplexity.clone()),
            });
        }
        let mut rng = rng_from(derive_indexed(self.seed, "mlm-batch", step as u64));
        loop {
            let picks = sample_batch(&weights, &self.pools, self.batch_size, &mut rng)?;
            let batch: Vec<MaskedExample> = picks
                .iter()
                .map(|(c, i)| self.pools[c][*i].mask(&self.masking, self.vocab_size, &mut rng))
                .collect::<Result<_>>()?;
            if batch.iter().any(|e| !e.masked.is_empty()) {
                return params.mlm_loss(&batch, Some(derive_indexed(self.seed, "mlm-dropout", step as u64)));
            }
        }
    }
}

// ---------------------------------------------------------------- bi-encoder

pub struct BiEncoderObjective {
    pub queries: Vec<Vec<u32>>,
    pub corpus_ids: Vec<String>,
    pub corpus: Vec<Vec<u32>>,
    /// `(query index, positive corpus index)`.
    pub pairs: Vec<(usize, usize)>,
    /// Relevant corpus ids per query, never used as negatives.
    pub positives: Vec<BTreeSet<String>>,
    pub validation: Vec<(usize, usize)>,
    pub batch_size: usize,
    pub tau: f64,
    pub hard_negatives: usize,
    /// Steps between mining rounds; 0 means once per epoch.
    pub refresh_every: usize,
    pub seed: u64,
    hard: Vec<Vec<usize>>,
    mined_at: Option<usize>,
    order: Option<(usize, Vec<usize>)>,
    pub mining_flags: Vec<String>,
}

impl BiEncoderObjective {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        queries: Vec<Vec<u32>>,
        corpus_ids: Vec<String>,
        corpus: Vec<Vec<u32>>,
        pairs: Vec<(usize, usize)>,
        positives: Vec<BTreeSet<String>>,
        validation: Vec<(usize, usize)>,
        batch_size: usize,
        tau: f64,
        hard_negatives: usize,
        seed: u64,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(ForgeError::Training("no training pairs".into()));
        }
        if positives.len() != queries.len() {
            return Err(ForgeError::Shape(format!("{} positive sets for {} queries", positives.len(), queries.len())));
        }
        Ok(Self {
            queries,
            corpus_ids,
            corpus,
            pairs,
            positives,
            validation,
            batch_size,
            tau,
            hard_negatives,
            refresh_every: 0,
            seed,
            hard: Vec::new(),
            mined_at: None,
            order: None,
            mining_flags: Vec::new(),
        })
    }

    fn mine(&mut self, params: &EncoderParams) -> Result<()> {
        let q = params.embed_all(&self.queries)?;
        let c = params.embed_all(&self.corpus)?;
        let (hard, flags) = mine_hard_negatives(&q, &c, &self.corpus_ids, self.hard_negatives, &self.positives);
        self.hard = hard;
        self.mining_flags = flags;
        Ok(())
    }

    /// In-batch negatives plus mined hard negatives.
    fn build(&self, pairs: &[(usize, usize)], with_hard: bool) -> ContrastiveBatch {
        let mut docs: Vec<usize> = Vec::new();
        let mut slot: BTreeMap<usize, usize> = BTreeMap::new();
        let mut add = |d: usize, docs: &mut Vec<usize>| *slot.entry(d).or_insert_with(|| {
            docs.push(d);
            docs.len() - 1
        });
        let pos: Vec<usize> = pairs.iter().map(|&(_, d)| add(d, &mut docs)).collect();
        if with_hard {
            for &(q, _) in pairs {
                for &h in &self.hard[q] {
                    add(h, &mut docs);
                }
            }
        }
        let candidates = pairs
            .iter()
            .zip(&pos)
            .map(|(&(q, _), &p)| {
                let mut c = vec![p];
                c.extend((0..docs.len()).filter(|&j| j != p && !self.positives[q].contains(&self.corpus_ids[docs[j]])));
                c
            })
            .collect();
        ContrastiveBatch {
            queries: pairs.iter().map(|&(q, _)| self.queries[q].clone()).collect(),
            docs: docs.iter().map(|&d| self.corpus[d].clone()).collect(),
            candidates,
        }
    }
}

impl Objective for BiEncoderObjective {
    fn task(&self) -> &'static str {
        "bi"
    }

    fn steps_per_epoch(&self) -> usize {
        self.pairs.len().div_ceil(self.batch_size.max(1))
    }

    fn batch_loss(&mut self, params: &EncoderParams, step: usize, _total: usize) -> Result<(f64, EncoderParams)> {
        let every = if self.refresh_every > 0 { self.refresh_every } else { self.steps_per_epoch() };
        if self.hard_negatives > 0 && self.mined_at.is_none_or(|m| step >= m + every) {
            self.mine(params)?;
            self.mined_at = Some(step);
        }
        let idx = batch_indices(self.pairs.len(), self.batch_size, self.seed, step, &mut self.order);
        let pairs: Vec<(usize, usize)> = idx.iter().map(|&i| self.pairs[i]).collect();
        let batch = self.build(&pairs, self.hard_negatives > 0);
        if batch.candidates.iter().any(|c| c.len() < 2) {
            return Err(ForgeError::Training("a query has no negative in its batch; raise batch size or enable hard negatives".into()));
        }
        params.bi_encoder_loss(&batch, self.tau, Some(derive_indexed(self.seed, "bi-dropout", step as u64)))
    }

    fn validation_loss(&mut self, params: &EncoderParams) -> Option<Result<f64>> {
        if self.validation.len() < 2 {
            return None;
        }
        let batch = self.build(&self.validation.clone(), false);
        Some(params.bi_encoder_loss(&batch, self.tau, None).map(|r| r.0))
    }
}

// ---------------------------------------------------------------- supervised heads

pub type BatchLoss<T> = fn(&EncoderParams, &[T], Option<u64>) -> Result<(f64, EncoderParams)>;

/// Shuffled mini-batches over labeled examples for the cross-encoder,
/// token-classification and sequence-classification heads.
pub struct SupervisedObjective<T> {
    pub task: &'static str,
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: BatchLoss<T>,
    order: Option<(usize, Vec<usize>)>,
}

impl<T: Clone + Sync> SupervisedObjective<T> {
    pub fn new(task: &'static str, train: Vec<T>, validation: Vec<T>, batch_size: usize, seed: u64, loss: BatchLoss<T>) -> Result<Self> {
        if train.is_empty() {
            return Err(ForgeError::Training(format!("{task}: no training examples")));
        }
        Ok(Self { task, train, validation, batch_size, seed, loss, order: None })
    }

    pub fn cross(train: Vec<(Vec<u32>, f64)>, val: Vec<(Vec<u32>, f64)>, batch: usize, seed: u64) -> Result<SupervisedObjective<(Vec<u32>, f64)>> {
        SupervisedObjective::new("cross", train, val, batch, seed, |p, b, s| p.pair_bce_loss(b, s))
    }

    pub fn ner(
        train: Vec<(Vec<u32>, Vec<Option<usize>>)>,
        val: Vec<(Vec<u32>, Vec<Option<usize>>)>,
        batch: usize,
        seed: u64,
    ) -> Result<SupervisedObjective<(Vec<u32>, Vec<Option<usize>>)>> {
        SupervisedObjective::new("ner", train, val, batch, seed, |p, b, s| p.token_cls_loss(b, s))
    }

    pub fn vuln(train: Vec<(Vec<u32>, usize)>, val: Vec<(Vec<u32>, usize)>, batch: usize, seed: u64) -> Result<SupervisedObjective<(Vec<u32>, usize)>> {
        SupervisedObjective::new("vuln", train, val, batch, seed, |p, b, s| p.seq_cls_loss(b, s))
    }
}

impl<T: Clone + Sync> Objective for SupervisedObjective<T> {
    fn task(&self) -> &'static str {
        self.task
    }

    fn steps_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.batch_size.max(1))
    }

    fn batch_loss(&mut self, params: &EncoderParams, step: usize, _total: usize) -> Result<(f64, EncoderParams)> {
        let idx = batch_indices(self.train.len(), self.batch_size, self.seed, step, &mut self.order);
        let batch: Vec<T> = idx.iter().map(|&i| self.train[i].clone()).collect();
        (self.loss)(params, &batch, Some(derive_indexed(self.seed, self.task, step as u64)))
    }

    fn validation_loss(&mut self, params: &EncoderParams) -> Option<Result<f64>> {
        if self.validation.is_empty() {
            return None;
        }
        Some((self.loss)(params, &self.validation, None).map(|r| r.0))
    }
}
