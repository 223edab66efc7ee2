//! In-memory pipeline stages. Commands wrap these with file IO and manifests.

use std::collections::{BTreeMap, BTreeSet};

use forge_core::corpus::{build_manifest, Category, CorpusManifest, Document, Modality, StageCounter};
use forge_core::curriculum::CurriculumTrace;
use forge_core::dedup::{dedup_corpus, DedupOutcome};
use forge_core::encoder::{
    held_out_examples, io_to_bio, pair_input, prepare_docs, train, BiEncoderObjective, EncoderConfig, EncoderParams,
    EntityLabel, MlmObjective, StepRecord, SupervisedObjective, TrainConfig, TrainOutcome,
};
use forge_core::evalset::{generate_eval_set, AnnotatedDoc, EvalCensus};
use forge_core::filter::{compute_balance_weights, filter_corpus, FilterOutcome, KeywordLexicon, LabeledSeed, RelevanceClassifier};
use forge_core::ingest::{build_vocab, normalize, NormalizeReport, Tokenizer, CLS, SEP};
use forge_core::masking::{make_eval_example, EvalCategory, EvalRecord};
use forge_core::metrics::{
    binary_cls_metrics, evaluate_rankings, topn_accuracy, NerTable, Qrels, RetrievalReport,
    TopNReport, VulnReport, TOPN_LEVELS,
};
use forge_core::retrieval::{
    retrieve_all, to_rankings, two_stage_all, wrap_sequence, CrossEncoderScorer, EmbeddingIndex,
};
use forge_core::seed::{derive_seed, fnv1a, mix64, stream_rng};
use forge_core::{ForgeError, Result};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::synth::{LabeledPair, NerExample, Query, TrainPair, VulnExample};

pub type StepLog<'a> = &'a mut dyn FnMut(&StepRecord);

// ---------------------------------------------------------------- corpus stages

/// Normalizes content and records each document's token count.
pub fn ingest_documents(raw: Vec<Document>) -> (Vec<Document>, NormalizeReport) {
    let probe = Tokenizer::from_vocab(Vec::new());
    let done: Vec<(Document, NormalizeReport)> = raw
        .into_par_iter()
        .map(|mut d| {
            let (text, rep) = normalize(&d.content, d.modality);
            d.content = text;
            d.token_count = Some(probe.tokens_for(&d.content, d.modality).len() as u64);
            (d, rep)
        })
        .collect();
    let mut report = NormalizeReport::default();
    let mut docs = Vec::with_capacity(done.len());
    for (d, r) in done {
        report.merge(r);
        docs.push(d);
    }
    (docs, report)
}

pub fn ingest_vocab(docs: &[Document], cfg: &RunConfig) -> Result<Tokenizer> {
    build_vocab(docs, cfg.ingest.min_count, cfg.ingest.max_vocab)
}

/// Fills missing token counts so manifests can be built from any corpus file.
pub fn with_token_counts(docs: &mut [Document]) {
    let probe = Tokenizer::from_vocab(Vec::new());
    for d in docs.iter_mut().filter(|d| d.token_count.is_none()) {
        d.token_count = Some(probe.tokens_for(&d.content, d.modality).len() as u64);
    }
}

pub fn dedup_stage(docs: &[Document], cfg: &RunConfig) -> Result<DedupOutcome> {
    dedup_corpus(docs, &cfg.dedup)
}

pub fn filter_stage(docs: &[Document], lexicon_terms: &[String], seeds: &[LabeledSeed], cfg: &RunConfig) -> Result<FilterOutcome> {
    let lexicon = KeywordLexicon::new(lexicon_terms, cfg.filter.min_hits);
    let examples: Vec<(Vec<String>, _)> = seeds
        .iter()
        .map(|s| (forge_core::filter::relevance_tokens(&Document::new("", Category::Seed, Modality::Text, s.content.clone())), s.label))
        .collect();
    let classifier = RelevanceClassifier::train(&examples, cfg.filter.alpha)?;
    Ok(filter_corpus(docs, &lexicon, &classifier, cfg.filter.tau))
}

pub fn stats_stage(docs: &[Document], tokenizer_version: &str, stages: &BTreeMap<String, StageCounter>) -> Result<CorpusManifest> {
    let mut m = build_manifest(docs, tokenizer_version)?;
    for (k, v) in stages {
        m.record_stage(k, *v);
    }
    Ok(m)
}

// ---------------------------------------------------------------- pretraining

pub struct PretrainResult {
    pub params: EncoderParams,
    pub outcome: TrainOutcome,
    pub curriculum: Vec<CurriculumTrace>,
    pub held_out_ids: Vec<String>,
}

pub fn model_config(cfg: &RunConfig, tok: &Tokenizer) -> EncoderConfig {
    EncoderConfig { vocab_size: tok.vocab_size(), ..cfg.model }
}

pub fn seq_len(model: &EncoderConfig, t: &TrainConfig) -> usize {
    t.max_len.min(model.max_len)
}

/// Lowest keyed hashes win, so the choice does not depend on input order.
fn pick_held_out(docs: &[Document], per_category: usize, seed: u64) -> BTreeSet<String> {
    let mut by_cat: BTreeMap<Category, Vec<(u64, &str)>> = BTreeMap::new();
    for d in docs {
        by_cat.entry(d.source).or_default().push((mix64(fnv1a(d.id.as_bytes()) ^ seed), d.id.as_str()));
    }
    let mut out = BTreeSet::new();
    for v in by_cat.values_mut() {
        v.sort();
        let take = per_category.min(v.len() / 2);
        out.extend(v.iter().take(take).map(|(_, id)| id.to_string()));
    }
    out
}

pub fn pretrain_stage(corpus: &[Document], tok: &Tokenizer, cfg: &RunConfig, log: StepLog) -> Result<PretrainResult> {
    let model = model_config(cfg, tok);
    model.validate()?;
    let len = seq_len(&model, &cfg.train.mlm);
    let held = pick_held_out(corpus, cfg.pretrain.held_out_per_category, derive_seed(cfg.seed, "held-out"));
    let (held_docs, mut train_docs): (Vec<Document>, Vec<Document>) =
        corpus.iter().cloned().partition(|d| held.contains(&d.id));
    with_token_counts(&mut train_docs);
    let manifest = build_manifest(&train_docs, &tok.version())?;
    let targets = if cfg.curriculum.targets.is_empty() {
        let n = manifest.categories.len() as f64;
        manifest.categories.iter().map(|r| (r.category, 1.0 / n)).collect()
    } else {
        cfg.curriculum.targets.clone()
    };
    let plan = compute_balance_weights(&manifest, &targets, cfg.curriculum.cap)?;
    let prepared = prepare_docs(&train_docs, tok, len, &cfg.masking)?;
    let held_prepared = prepare_docs(&held_docs, tok, len, &cfg.masking)?;
    let held_out = held_out_examples(&held_prepared, &cfg.masking, tok.vocab_size(), derive_seed(cfg.seed, "held-out-mask"));
    let mut params = EncoderParams::init(model, derive_seed(cfg.seed, "init"))?;
    let mut objective = MlmObjective::new(
        prepared,
        plan,
        cfg.curriculum.clone(),
        cfg.masking,
        held_out,
        cfg.train.mlm.batch_size,
        tok.vocab_size(),
        derive_seed(cfg.seed, "mlm"),
    )?;
    let outcome = train(&mut params, &mut objective, &cfg.train.mlm, log)?;
    Ok(PretrainResult { params, outcome, curriculum: objective.curriculum_trace, held_out_ids: held.into_iter().collect() })
}

// ---------------------------------------------------------------- fine-tuning

pub fn content_ids(tok: &Tokenizer, text: &str, modality: Modality) -> Vec<u32> {
    tok.tokens_for(text, modality).iter().map(|t| tok.lookup(&t.text)).collect()
}

/// Deterministic split of `n` items into (train, validation) index lists.
fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, "validation-split"));
    let k = ((n as f64) * fraction).round() as usize;
    let k = if n >= 2 { k.min(n - 1) } else { 0 };
    let mut val: Vec<usize> = idx[..k].to_vec();
    let mut tr: Vec<usize> = idx[k..].to_vec();
    val.sort_unstable();
    tr.sort_unstable();
    (tr, val)
}

fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

pub fn finetune_bi(
    init: &EncoderParams,
    tok: &Tokenizer,
    docs: &[Document],
    pairs: &[TrainPair],
    cfg: &RunConfig,
    log: StepLog,
) -> Result<(EncoderParams, TrainOutcome)> {
    let len = seq_len(&init.config, &cfg.train.bi);
    let pos: BTreeMap<&str, usize> = docs.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
    let corpus: Vec<Vec<u32>> = docs.iter().map(|d| wrap_sequence(&content_ids(tok, &d.content, d.modality), len)).collect();
    let mut queries = Vec::with_capacity(pairs.len());
    let mut positives: Vec<BTreeSet<String>> = Vec::with_capacity(pairs.len());
    let mut all = Vec::with_capacity(pairs.len());
    let mut relevant: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for p in pairs {
        relevant.entry(p.query.as_str()).or_default().insert(p.doc_id.clone());
    }
    for (qi, p) in pairs.iter().enumerate() {
        let d = *pos
            .get(p.doc_id.as_str())
            .ok_or_else(|| ForgeError::Input(format!("training pair names unknown document `{}`", p.doc_id)))?;
        queries.push(wrap_sequence(&content_ids(tok, &p.query, Modality::Text), len));
        positives.push(relevant[p.query.as_str()].clone());
        all.push((qi, d));
    }
    let (tr, val) = split_indices(all.len(), cfg.retrieval.validation_fraction, derive_seed(cfg.seed, "bi"));
    let mut objective = BiEncoderObjective::new(
        queries,
        docs.iter().map(|d| d.id.clone()).collect(),
        corpus,
        pick(&all, &tr),
        positives,
        pick(&all, &val),
        cfg.train.bi.batch_size,
        cfg.retrieval.tau,
        cfg.retrieval.hard_negatives,
        derive_seed(cfg.seed, "bi"),
    )?;
    objective.refresh_every = cfg.retrieval.refresh_every;
    let mut params = init.clone();
    let outcome = train(&mut params, &mut objective, &cfg.train.bi, log)?;
    Ok((params, outcome))
}

pub fn cross_examples(tok: &Tokenizer, pairs: &[LabeledPair], max_len: usize) -> Result<Vec<(Vec<u32>, f64)>> {
    pairs
        .iter()
        .map(|p| {
            let q = content_ids(tok, &p.query, Modality::Text);
            let d = content_ids(tok, &p.document, Modality::Text);
            Ok((pair_input(&q, &d, max_len)?, p.label))
        })
        .collect()
}

pub fn finetune_cross(init: &EncoderParams, tok: &Tokenizer, pairs: &[LabeledPair], cfg: &RunConfig, log: StepLog) -> Result<(EncoderParams, TrainOutcome)> {
    let ex = cross_examples(tok, pairs, seq_len(&init.config, &cfg.train.cross))?;
    let (tr, val) = split_indices(ex.len(), cfg.eval.validation_fraction, derive_seed(cfg.seed, "cross"));
    let mut objective = SupervisedObjective::<(Vec<u32>, f64)>::cross(pick(&ex, &tr), pick(&ex, &val), cfg.train.cross.batch_size, derive_seed(cfg.seed, "cross"))?;
    let mut params = init.clone();
    let outcome = train(&mut params, &mut objective, &cfg.train.cross, log)?;
    Ok((params, outcome))
}

/// `CLS tokens SEP` with IO label indices; structural positions carry `None`.
pub fn ner_example(tok: &Tokenizer, ex: &NerExample, max_len: usize) -> Result<(Vec<u32>, Vec<Option<usize>>)> {
    if ex.tokens.len() != ex.tags.len() {
        return Err(ForgeError::Input(format!("`{}`: {} tokens but {} tags", ex.id, ex.tokens.len(), ex.tags.len())));
    }
    let keep = ex.tokens.len().min(max_len - 2);
    let mut ids = vec![CLS];
    let mut labels = vec![None];
    for (t, tag) in ex.tokens.iter().zip(&ex.tags).take(keep) {
        ids.push(tok.lookup(&t.to_lowercase()));
        labels.push(Some(EntityLabel::from_bio(tag)?.index()));
    }
    ids.push(SEP);
    labels.push(None);
    Ok((ids, labels))
}

pub fn finetune_ner(init: &EncoderParams, tok: &Tokenizer, train_set: &[NerExample], cfg: &RunConfig, log: StepLog) -> Result<(EncoderParams, TrainOutcome)> {
    let len = seq_len(&init.config, &cfg.train.ner);
    let ex: Vec<_> = train_set.iter().map(|e| ner_example(tok, e, len)).collect::<Result<_>>()?;
    let (tr, val) = split_indices(ex.len(), cfg.eval.validation_fraction, derive_seed(cfg.seed, "ner"));
    let mut objective = SupervisedObjective::<(Vec<u32>, Vec<Option<usize>>)>::ner(pick(&ex, &tr), pick(&ex, &val), cfg.train.ner.batch_size, derive_seed(cfg.seed, "ner"))?;
    let mut params = init.clone();
    let outcome = train(&mut params, &mut objective, &cfg.train.ner, log)?;
    Ok((params, outcome))
}

pub fn vuln_example(tok: &Tokenizer, ex: &VulnExample, max_len: usize) -> Result<(Vec<u32>, usize)> {
    Ok((tok.encode_document(&ex.code, Modality::Code, max_len)?.ids, usize::from(ex.vulnerable)))
}

pub fn finetune_vuln(init: &EncoderParams, tok: &Tokenizer, train_set: &[VulnExample], cfg: &RunConfig, log: StepLog) -> Result<(EncoderParams, TrainOutcome)> {
    let len = seq_len(&init.config, &cfg.train.vuln);
    let ex: Vec<_> = train_set.iter().map(|e| vuln_example(tok, e, len)).collect::<Result<_>>()?;
    let (tr, val) = split_indices(ex.len(), cfg.eval.validation_fraction, derive_seed(cfg.seed, "vuln"));
    let mut objective = SupervisedObjective::<(Vec<u32>, usize)>::vuln(pick(&ex, &tr), pick(&ex, &val), cfg.train.vuln.batch_size, derive_seed(cfg.seed, "vuln"))?;
    let mut params = init.clone();
    let outcome = train(&mut params, &mut objective, &cfg.train.vuln, log)?;
    Ok((params, outcome))
}

// ---------------------------------------------------------------- evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmEvalReport {
    pub table: TopNReport,
    pub census: EvalCensus,
    /// Random-chance top-5 accuracy, `5 / V`.
    pub chance_top5: f64,
}

/// 1-based rank at which every masked position's gold is inside the top list.
fn hit_rank(ranked: &[Vec<u32>], golds: &[u32]) -> Option<usize> {
    let mut worst = 0;
    for (r, g) in ranked.iter().zip(golds) {
        worst = worst.max(r.iter().position(|x| x == g)? + 1);
    }
    Some(worst)
}

pub fn eval_mlm(
    params: &EncoderParams,
    tok: &Tokenizer,
    eval_docs: &[AnnotatedDoc],
    training_ids: &BTreeSet<String>,
    cfg: &RunConfig,
) -> Result<(MlmEvalReport, Vec<EvalRecord>)> {
    let mut rng = stream_rng(cfg.seed, "eval-mlm");
    let (records, census) = generate_eval_set(eval_docs, cfg.eval.counts, training_ids, &mut rng)?;
    let len = params.config.max_len;
    let top = *TOPN_LEVELS.iter().max().expect("levels");
    let ranks: Vec<Result<Option<usize>>> = records
        .par_iter()
        .map(|r| {
            let ex = make_eval_example(r, tok, len)?;
            let ranked = params.mlm_rank(&ex, top)?;
            let golds: Vec<u32> = ex.masked.iter().map(|&p| ex.labels[p].expect("masked position has a label")).collect();
            Ok(hit_rank(&ranked, &golds))
        })
        .collect();
    let mut groups: [(Vec<Vec<bool>>, Vec<bool>); 3] = Default::default();
    for (r, rank) in records.iter().zip(ranks) {
        let rank = rank?;
        let g = match r.category {
            EvalCategory::Noun => 0,
            EvalCategory::Verb => 1,
            _ => 2,
        };
        // hit indicator per rank position
        groups[g].0.push((1..=top).map(|k| rank == Some(k)).collect());
        groups[g].1.push(true);
    }
    let mut rows = Vec::new();
    for (preds, golds) in &groups {
        rows.push(if preds.is_empty() {
            TOPN_LEVELS.iter().map(|&n| (n, 0.0)).collect()
        } else {
            topn_accuracy(preds, golds, &TOPN_LEVELS)?
        });
    }
    let examples = [groups[0].0.len(), groups[1].0.len(), groups[2].0.len()];
    let table = TopNReport::new(&rows[0], &rows[1], &rows[2], examples);
    Ok((MlmEvalReport { table, census, chance_top5: 5.0 / tok.vocab_size() as f64 }, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEval {
    pub bi_encoder: RetrievalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_encoder: Option<RetrievalReport>,
    pub k1: usize,
    pub k2: usize,
}

pub fn doc_sequences(tok: &Tokenizer, docs: &[Document], max_len: usize) -> Vec<(String, Vec<u32>)> {
    docs.iter().map(|d| (d.id.clone(), wrap_sequence(&content_ids(tok, &d.content, d.modality), max_len))).collect()
}

pub fn query_ids(tok: &Tokenizer, queries: &[Query]) -> Vec<(String, Vec<u32>)> {
    queries.iter().map(|q| (q.query_id.clone(), content_ids(tok, &q.text, Modality::Text))).collect()
}

pub fn eval_retrieval(
    bi: &EncoderParams,
    cross: Option<&EncoderParams>,
    tok: &Tokenizer,
    index: &EmbeddingIndex,
    docs: &[Document],
    queries: &[Query],
    qrels: &Qrels,
    cfg: &RunConfig,
) -> Result<RetrievalEval> {
    forge_core::retrieval::check_qrels(qrels, index)?;
    let q = query_ids(tok, queries);
    let k1 = if cfg.eval.k1 == 0 { index.len() } else { cfg.eval.k1.min(index.len()) };
    let k2 = cfg.eval.k2.min(k1);
    let stage1 = retrieve_all(index, bi, &q, k2)?;
    let bi_encoder = evaluate_rankings(&to_rankings(&stage1), qrels, false);
    let cross_encoder = match cross {
        None => None,
        Some(c) => {
            let content: BTreeMap<String, Vec<u32>> =
                docs.iter().map(|d| (d.id.clone(), content_ids(tok, &d.content, d.modality))).collect();
            let scorer = CrossEncoderScorer { params: c, docs: &content, max_len: seq_len(&c.config, &cfg.train.cross) };
            let res = two_stage_all(index, bi, &scorer, &q, k1, k2)?;
            let lists: BTreeMap<String, _> = res.into_iter().map(|(k, v)| (k, v.reranked)).collect();
            Some(evaluate_rankings(&to_rankings(&lists), qrels, true))
        }
    };
    Ok(RetrievalEval { bi_encoder, cross_encoder, k1, k2 })
}

pub fn eval_ner(params: &EncoderParams, tok: &Tokenizer, test: &[NerExample]) -> Result<NerTable> {
    let len = params.config.max_len;
    let preds: Vec<Result<Vec<String>>> = test
        .par_iter()
        .map(|e| {
            let (ids, _) = ner_example(tok, e, len)?;
            let labels = params.token_cls_predict(&ids)?;
            let io: Vec<EntityLabel> =
                labels[1..labels.len() - 1].iter().map(|&i| EntityLabel::from_index(i).unwrap_or(EntityLabel::O)).collect();
            Ok(io_to_bio(&io))
        })
        .collect();
    let preds: Vec<Vec<String>> = preds.into_iter().collect::<Result<_>>()?;
    let golds: Vec<Vec<String>> = test.iter().zip(&preds).map(|(e, p)| e.tags[..p.len()].to_vec()).collect();
    NerTable::new(&golds, &preds)
}

pub fn eval_vuln(params: &EncoderParams, tok: &Tokenizer, test: &[VulnExample]) -> Result<VulnReport> {
    let len = params.config.max_len;
    let preds: Vec<Result<bool>> = test
        .par_iter()
        .map(|e| Ok(params.seq_cls_predict(&vuln_example(tok, e, len)?.0)? == 1))
        .collect();
    let preds: Vec<bool> = preds.into_iter().collect::<Result<_>>()?;
    let golds: Vec<bool> = test.iter().map(|e| e.vulnerable).collect();
    Ok(VulnReport::new(binary_cls_metrics(&golds, &preds)?))
}

/// Ids shared between a training and a test set, reported through the split validator.
pub fn check_disjoint<'a>(train: impl IntoIterator<Item = &'a str>, test: impl IntoIterator<Item = &'a str>, what: &str) -> Result<()> {
    let split = forge_core::corpus::DatasetSplit {
        train: train.into_iter().map(str::to_string).collect(),
        test: test.into_iter().map(str::to_string).collect(),
    };
    let corpus: BTreeSet<String> = split.train.union(&split.test).cloned().collect();
    let report = forge_core::corpus::validate_split(&split, &corpus);
    if !report.is_valid() {
        return Err(ForgeError::ProtocolViolation(format!(
            "validate_split: {what} train/test overlap on {} ids (first: `{}`)",
            report.overlap.len(),
            report.overlap[0]
        )));
    }
    Ok(())
}
