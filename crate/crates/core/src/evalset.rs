//! Targeted evaluation sets: one masked noun, verb or code element per record.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Modality};
use crate::error::{ForgeError, Result};
use crate::ingest::tokenize_spanned;
use crate::lexer::lex_code;
use crate::masking::{EvalCategory, EvalRecord};
use crate::seed::Rng;

/// A candidate target inside a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Annotation {
    pub start: usize,
    pub end: usize,
    pub category: EvalCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedDoc {
    pub doc: Document,
    pub annotations: Vec<Annotation>,
}

/// Code targets come straight from the lexer.
pub fn annotate_code(source: &str) -> Vec<Annotation> {
    lex_code(source)
        .tokens
        .iter()
        .filter_map(|t| EvalCategory::from_lex(t.class).map(|category| Annotation { start: t.start, end: t.end, category }))
        .collect()
}

/// Approximate noun/verb tagger built from a verb list, a stoplist and
/// suffix rules. Only meant to bootstrap annotations.
#[derive(Debug, Clone, Default)]
pub struct HeuristicTagger {
    pub verbs: BTreeSet<String>,
    pub stop: BTreeSet<String>,
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "if", "of", "to", "in", "on", "at", "by", "for", "with", "from", "into",
    "over", "under", "via", "as", "is", "are", "was", "were", "be", "been", "being", "has", "have", "had", "it",
    "its", "this", "that", "these", "those", "they", "them", "their", "he", "she", "we", "you", "i", "not", "no",
    "can", "could", "may", "might", "will", "would", "should", "must", "do", "does", "did", "than", "then", "also",
    "which", "who", "whom", "what", "when", "where", "while", "after", "before", "all", "any", "some", "each",
    "other", "such", "more", "most", "very", "new", "several", "many",
];

const VERB_SUFFIXES: &[&str] = &["ed", "ing", "izes", "ize", "ises", "ise", "ates", "ate", "ifies", "ify"];
const NOUN_SUFFIXES: &[&str] =
    &["tion", "sion", "ment", "ware", "ity", "ness", "ance", "ence", "ism", "ure", "age", "er", "ers", "or", "ors", "ist"];

impl HeuristicTagger {
    pub fn new(verbs: impl IntoIterator<Item = String>) -> Self {
        Self { verbs: verbs.into_iter().collect(), stop: STOPWORDS.iter().map(|s| s.to_string()).collect() }
    }

    pub fn tag_word(&self, word: &str) -> Option<EvalCategory> {
        let w = word.to_lowercase();
        if w.len() < 3 || self.stop.contains(&w) || !w.chars().all(char::is_alphabetic) {
            return None;
        }
        if self.verbs.contains(&w) {
            return Some(EvalCategory::Verb);
        }
        if NOUN_SUFFIXES.iter().any(|s| w.ends_with(s)) {
            return Some(EvalCategory::Noun);
        }
        if VERB_SUFFIXES.iter().any(|s| w.ends_with(s)) {
            return Some(EvalCategory::Verb);
        }
        Some(EvalCategory::Noun)
    }

    pub fn annotate(&self, text: &str) -> Vec<Annotation> {
        tokenize_spanned(text)
            .into_iter()
            .filter_map(|t| self.tag_word(&t.text).map(|category| Annotation { start: t.start, end: t.end, category }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub nouns: usize,
    pub verbs: usize,
    pub code: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCensus {
    pub noun_records: usize,
    pub unique_nouns: usize,
    pub verb_records: usize,
    pub unique_verbs: usize,
    pub code_records: usize,
    /// Distinct identifiers and function names.
    pub unique_identifiers: usize,
    pub unique_operators: usize,
    /// Requested minus produced, per group; zero when fully satisfied.
    pub shortfall: EvalCounts,
}

impl EvalCensus {
    pub fn of(records: &[EvalRecord], requested: EvalCounts) -> Self {
        let mut surfaces: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
        let mut c = EvalCensus::default();
        for r in records {
            let (bucket, gold) = match r.category {
                EvalCategory::Noun => {
                    c.noun_records += 1;
                    ("noun", r.gold.to_lowercase())
                }
                EvalCategory::Verb => {
                    c.verb_records += 1;
                    ("verb", r.gold.to_lowercase())
                }
                EvalCategory::Identifier | EvalCategory::FunctionName => {
                    c.code_records += 1;
                    ("ident", r.gold.clone())
                }
                EvalCategory::Operator => {
                    c.code_records += 1;
                    ("op", r.gold.clone())
                }
            };
            surfaces.entry(bucket).or_default().insert(gold);
        }
        let n = |k: &str| surfaces.get(k).map_or(0, BTreeSet::len);
        c.unique_nouns = n("noun");
        c.unique_verbs = n("verb");
        c.unique_identifiers = n("ident");
        c.unique_operators = n("op");
        c.shortfall = EvalCounts {
            nouns: requested.nouns.saturating_sub(c.noun_records),
            verbs: requested.verbs.saturating_sub(c.verb_records),
            code: requested.code.saturating_sub(c.code_records),
        };
        c
    }
}

fn make_record(doc: &Document, a: &Annotation) -> EvalRecord {
    EvalRecord {
        content: doc.content.clone(),
        modality: doc.modality,
        target_start: a.start,
        target_end: a.end,
        category: a.category,
        gold: doc.content[a.start..a.end].to_string(),
        source_id: Some(doc.id.clone()),
    }
}

/// Draws records in a seeded document order, at most one per group per
/// document, preferring surfaces not yet used. Documents listed in
/// `training_ids` are refused.
pub fn generate_eval_set(
    docs: &[AnnotatedDoc],
    counts: EvalCounts,
    training_ids: &BTreeSet<String>,
    rng: &mut Rng,
) -> Result<(Vec<EvalRecord>, EvalCensus)> {
    if let Some(d) = docs.iter().find(|d| training_ids.contains(&d.doc.id)) {
        return Err(ForgeError::ProtocolViolation(format!("evaluation source `{}` is in the training split", d.doc.id)));
    }
    for d in docs {
        if let Some(a) = d.annotations.iter().find(|a| d.doc.content.get(a.start..a.end).is_none_or(str::is_empty)) {
            return Err(ForgeError::Alignment(format!("annotation {}..{} is outside document `{}`", a.start, a.end, d.doc.id)));
        }
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(rng);
    let mut want = counts;
    let mut seen: BTreeSet<(EvalCategory, String)> = BTreeSet::new();
    let mut records = Vec::new();
    for &i in &order {
        let d = &docs[i];
        let groups: &[(&[EvalCategory], fn(&mut EvalCounts) -> &mut usize)] = match d.doc.modality {
            Modality::Text => &[(&[EvalCategory::Noun], |c| &mut c.nouns), (&[EvalCategory::Verb], |c| &mut c.verbs)],
            Modality::Code => &[(
                &[EvalCategory::Identifier, EvalCategory::FunctionName, EvalCategory::Operator],
                |c| &mut c.code,
            )],
        };
        for (cats, slot) in groups {
            if *slot(&mut want) == 0 {
                continue;
            }
            let cands: Vec<&Annotation> = d.annotations.iter().filter(|a| cats.contains(&a.category)).collect();
            if cands.is_empty() {
                continue;
            }
            let fresh: Vec<&&Annotation> =
                cands.iter().filter(|a| !seen.contains(&(a.category, d.doc.content[a.start..a.end].to_string()))).collect();
            let a = if fresh.is_empty() { cands[rng.random_range(0..cands.len())] } else { fresh[rng.random_range(0..fresh.len())] };
            let r = make_record(&d.doc, a);
            seen.insert((r.category, r.gold.clone()));
            records.push(r);
            *slot(&mut want) -= 1;
        }
    }
    let census = EvalCensus::of(&records, counts);
    Ok((records, census))
}
