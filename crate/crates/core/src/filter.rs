//! Relevance filtering (keyword hits OR a naive Bayes posterior) and
//! per-category balancing weights.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Category, CorpusManifest, Document};
use crate::error::{ForgeError, Result};
use crate::ingest::Tokenizer;

/// Lowercased tokens of a document, as seen by both relevance scorers.
pub fn relevance_tokens(doc: &Document) -> Vec<String> {
    let probe = Tokenizer::from_vocab(Vec::new());
    probe.tokens_for(&doc.content, doc.modality).into_iter().map(|t| t.text.to_lowercase()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordLexicon {
    pub terms: BTreeSet<String>,
    pub min_hits: usize,
}

impl KeywordLexicon {
    pub fn new<I: IntoIterator<Item = S>, S: AsRef<str>>(terms: I, min_hits: usize) -> Self {
        Self { terms: terms.into_iter().map(|t| t.as_ref().trim().to_lowercase()).filter(|t| !t.is_empty()).collect(), min_hits }
    }

    /// One term per line; blank lines ignored.
    pub fn parse(text: &str, min_hits: usize) -> Self {
        Self::new(text.lines(), min_hits)
    }
}

/// Token occurrences (with multiplicity) found in the lexicon.
pub fn keyword_score<S: AsRef<str>>(tokens: &[S], lexicon: &KeywordLexicon) -> usize {
    tokens.iter().filter(|t| lexicon.terms.contains(t.as_ref())).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relevance {
    Relevant,
    Irrelevant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeed {
    pub content: String,
    pub label: Relevance,
}

/// Multinomial naive Bayes with Laplace smoothing.
#[derive(Debug, Clone)]
pub struct RelevanceClassifier {
    pub prior_relevant: f64,
    pub alpha: f64,
    log_prior: [f64; 2],
    log_likelihood: HashMap<String, [f64; 2]>,
}

fn class_index(label: Relevance) -> usize {
    match label {
        Relevance::Relevant => 0,
        Relevance::Irrelevant => 1,
    }
}

impl RelevanceClassifier {
    pub fn train<S: AsRef<str>>(examples: &[(Vec<S>, Relevance)], alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(ForgeError::Config(format!("smoothing alpha must be positive, got {alpha}")));
        }
        let mut docs = [0usize; 2];
        let mut totals = [0usize; 2];
        let mut counts: HashMap<String, [usize; 2]> = HashMap::new();
        for (tokens, label) in examples {
            let c = class_index(*label);
            docs[c] += 1;
            for t in tokens {
                counts.entry(t.as_ref().to_string()).or_default()[c] += 1;
                totals[c] += 1;
            }
        }
        if docs[0] == 0 || docs[1] == 0 {
            return Err(ForgeError::Training("relevance classifier needs at least one example of each label".into()));
        }
        let v = counts.len() as f64;
        let n = (docs[0] + docs[1]) as f64;
        let log_prior = [(docs[0] as f64 / n).ln(), (docs[1] as f64 / n).ln()];
        let log_likelihood = counts
            .into_iter()
            .map(|(t, c)| {
                let ll = [0, 1].map(|k| ((c[k] as f64 + alpha) / (totals[k] as f64 + alpha * v)).ln());
                (t, ll)
            })
            .collect();
        Ok(Self { prior_relevant: docs[0] as f64 / n, alpha, log_prior, log_likelihood })
    }

    pub fn likelihood(&self, token: &str, label: Relevance) -> Option<f64> {
        self.log_likelihood.get(token).map(|ll| ll[class_index(label)].exp())
    }

    /// P(relevant | tokens); out-of-vocabulary tokens are ignored.
    pub fn posterior<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        let mut score = self.log_prior;
        for t in tokens {
            if let Some(ll) = self.log_likelihood.get(t.as_ref()) {
                score[0] += ll[0];
                score[1] += ll[1];
            }
        }
        1.0 / (1.0 + (score[1] - score[0]).exp())
    }
}

pub fn classify_relevance(classifier: &RelevanceClassifier, doc: &Document) -> f64 {
    classifier.posterior(&relevance_tokens(doc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDrop {
    pub id: String,
    pub keyword_hits: usize,
    pub posterior: f64,
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub kept: Vec<Document>,
    pub report: Vec<FilterDrop>,
}

/// Keeps a document when it has at least `min_hits` lexicon hits or its
/// relevance posterior is at least `tau` (inclusive).
pub fn filter_corpus(
    documents: &[Document],
    lexicon: &KeywordLexicon,
    classifier: &RelevanceClassifier,
    tau: f64,
) -> FilterOutcome {
    let scores: Vec<(usize, f64)> = documents
        .par_iter()
        .map(|d| {
            let toks = relevance_tokens(d);
            (keyword_score(&toks, lexicon), classifier.posterior(&toks))
        })
        .collect();
    let mut kept = Vec::new();
    let mut report = Vec::new();
    for (doc, (hits, post)) in documents.iter().zip(scores) {
        if keeps(hits, post, lexicon.min_hits, tau) {
            kept.push(doc.clone());
        } else {
            report.push(FilterDrop { id: doc.id.clone(), keyword_hits: hits, posterior: post });
        }
    }
    FilterOutcome { kept, report }
}

fn keeps(hits: usize, posterior: f64, min_hits: usize, tau: f64) -> bool {
    hits >= min_hits || posterior >= tau
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceEntry {
    /// Empirical token share in the corpus.
    pub share: f64,
    pub target: f64,
    pub weight: f64,
}

/// Sampling-weight multipliers steering category shares toward targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancePlan {
    pub cap: f64,
    pub entries: BTreeMap<Category, BalanceEntry>,
}

impl BalancePlan {
    /// Category distribution after re-weighting: `w_c * s_c`, renormalized.
    pub fn sampled_shares(&self) -> BTreeMap<Category, f64> {
        let z: f64 = self.entries.values().map(|e| e.weight * e.share).sum();
        self.entries.iter().map(|(c, e)| (*c, e.weight * e.share / z)).collect()
    }

    pub fn categories(&self) -> impl Iterator<Item = Category> + '_ {
        self.entries.keys().copied()
    }
}

/// `w_c = min(cap, t_c / s_c)`, with `s_c` each category's token share.
pub fn compute_balance_weights(
    manifest: &CorpusManifest,
    targets: &BTreeMap<Category, f64>,
    cap: f64,
) -> Result<BalancePlan> {
    if !(cap > 0.0) || !cap.is_finite() {
        return Err(ForgeError::Config(format!("balance cap must be positive and finite, got {cap}")));
    }
    let sum: f64 = targets.values().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(ForgeError::Config(format!("balance targets must sum to 1, got {sum}")));
    }
    let present: BTreeMap<Category, u64> =
        manifest.categories.iter().map(|r| (r.category, r.code_tokens + r.text_tokens)).collect();
    for c in targets.keys() {
        match present.get(c) {
            None => return Err(ForgeError::Config(format!("balance target given for absent category `{c}`"))),
            Some(0) => return Err(ForgeError::Config(format!("category `{c}` has no tokens"))),
            Some(_) => {}
        }
    }
    let total: u64 = present.values().sum();
    let mut entries = BTreeMap::new();
    for (c, tokens) in &present {
        let target = *targets
            .get(c)
            .ok_or_else(|| ForgeError::Config(format!("no balance target for present category `{c}`")))?;
        if !(target > 0.0) {
            return Err(ForgeError::Config(format!("balance target for `{c}` must be positive")));
        }
        let share = *tokens as f64 / total as f64;
        entries.insert(*c, BalanceEntry { share, target, weight: (target / share).min(cap) });
    }
    Ok(BalancePlan { cap, entries })
}
