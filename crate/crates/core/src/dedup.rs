//! Near-duplicate removal: token shingles, MinHash signatures, banded LSH
//! candidate generation and character-level confirmation.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Modality};
use crate::error::{ForgeError, Result};
use crate::ingest::Tokenizer;
use crate::seed::{fnv1a, mix64};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShingleSet {
    pub doc_id: String,
    pub k: usize,
    /// Sorted and deduplicated.
    pub shingles: Vec<u64>,
}

impl ShingleSet {
    pub fn len(&self) -> usize {
        self.shingles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shingles.is_empty()
    }

    pub fn from_hashes(doc_id: impl Into<String>, k: usize, hashes: impl IntoIterator<Item = u64>) -> Self {
        let set: BTreeSet<u64> = hashes.into_iter().collect();
        Self { doc_id: doc_id.into(), k, shingles: set.into_iter().collect() }
    }
}

fn hash_window<S: AsRef<str>>(window: &[S]) -> u64 {
    let mut buf = Vec::new();
    for (i, t) in window.iter().enumerate() {
        if i > 0 {
            buf.push(0x1f);
        }
        buf.extend_from_slice(t.as_ref().as_bytes());
    }
    fnv1a(&buf)
}

/// Hashes of every consecutive `k`-token window. Empty when `len < k`.
pub fn shingle<S: AsRef<str>>(doc_id: &str, tokens: &[S], k: usize) -> Result<ShingleSet> {
    if k == 0 {
        return Err(ForgeError::Config("shingle width k must be at least 1".into()));
    }
    let hashes = if tokens.len() < k { Vec::new() } else { tokens.windows(k).map(hash_window).collect() };
    Ok(ShingleSet::from_hashes(doc_id, k, hashes))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    pub doc_id: String,
    pub values: Vec<u64>,
    pub seed: u64,
}

fn permutation_keys(perms: usize, seed: u64) -> Vec<u64> {
    (0..perms as u64).map(|i| mix64(seed ^ mix64(i.wrapping_mul(0xD6E8_FEB8_6659_FD93)))).collect()
}

/// `values[i]` is the minimum of the `i`-th seeded hash over the shingles.
pub fn minhash_signature(set: &ShingleSet, perms: usize, seed: u64) -> Result<MinHashSignature> {
    if perms == 0 {
        return Err(ForgeError::Config("signature length must be at least 1".into()));
    }
    if set.is_empty() {
        return Err(ForgeError::Unshingleable(set.doc_id.clone()));
    }
    let keys = permutation_keys(perms, seed);
    let mut values = vec![u64::MAX; perms];
    for &x in &set.shingles {
        for (slot, key) in values.iter_mut().zip(&keys) {
            let h = mix64(x ^ key);
            if h < *slot {
                *slot = h;
            }
        }
    }
    Ok(MinHashSignature { doc_id: set.doc_id.clone(), values, seed })
}

/// Fraction of matching signature slots.
pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64> {
    if a.values.len() != b.values.len() || a.seed != b.seed {
        return Err(ForgeError::IncompatibleSignature(format!(
            "`{}` has {} slots (seed {}), `{}` has {} slots (seed {})",
            a.doc_id,
            a.values.len(),
            a.seed,
            b.doc_id,
            b.values.len(),
            b.seed
        )));
    }
    let same = a.values.iter().zip(&b.values).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactJaccard {
    pub value: f64,
    /// Both sets empty; `value` is reported as 1.0.
    pub degenerate: bool,
}

pub fn exact_jaccard(a: &ShingleSet, b: &ShingleSet) -> ExactJaccard {
    if a.is_empty() && b.is_empty() {
        return ExactJaccard { value: 1.0, degenerate: true };
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.shingles.len() && j < b.shingles.len() {
        match a.shingles[i].cmp(&b.shingles[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    ExactJaccard { value: inter as f64 / union as f64, degenerate: false }
}

/// Banded LSH buckets keyed by `(band, band hash)`.
#[derive(Debug, Clone)]
pub struct LshIndex {
    pub bands: usize,
    pub rows_per_band: usize,
    pub buckets: HashMap<(usize, u64), Vec<usize>>,
}

impl LshIndex {
    pub fn build(signatures: &[&MinHashSignature], bands: usize, rows: usize) -> Result<Self> {
        let mut index = LshIndex { bands, rows_per_band: rows, buckets: HashMap::new() };
        for (i, sig) in signatures.iter().enumerate() {
            if bands * rows != sig.values.len() {
                return Err(ForgeError::Config(format!(
                    "bands x rows = {} x {} does not equal signature length {}",
                    bands,
                    rows,
                    sig.values.len()
                )));
            }
            for b in 0..bands {
                let key = (b, band_hash(b, &sig.values[b * rows..(b + 1) * rows]));
                index.buckets.entry(key).or_default().push(i);
            }
        }
        Ok(index)
    }

    /// Unordered index pairs sharing at least one bucket, as `(lo, hi)`.
    pub fn candidate_pairs(&self) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for members in self.buckets.values() {
            for (x, &i) in members.iter().enumerate() {
                for &j in &members[x + 1..] {
                    if i != j {
                        out.insert((i.min(j), i.max(j)));
                    }
                }
            }
        }
        out
    }
}

fn band_hash(band: usize, rows: &[u64]) -> u64 {
    rows.iter().fold(mix64(band as u64 ^ 0xA076_1D64_78BD_642F), |h, &v| mix64(h ^ v))
}

/// Candidate pairs as document-id pairs ordered `(earlier, later)` by input position.
pub fn lsh_candidates(signatures: &[MinHashSignature], bands: usize, rows: usize) -> Result<Vec<(String, String)>> {
    let refs: Vec<&MinHashSignature> = signatures.iter().collect();
    if bands * rows != signatures.first().map_or(bands * rows, |s| s.values.len()) {
        return Err(ForgeError::Config(format!("bands x rows = {bands} x {rows} does not match signature length")));
    }
    let index = LshIndex::build(&refs, bands, rows)?;
    Ok(index
        .candidate_pairs()
        .into_iter()
        .map(|(i, j)| (signatures[i].doc_id.clone(), signatures[j].doc_id.clone()))
        .collect())
}

pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - levenshtein / max(len)`; two empty strings are identical.
pub fn char_similarity(a: &str, b: &str) -> f64 {
    char_similarity_prefix(a, b, usize::MAX)
}

/// Character similarity over at most the first `limit` characters of each input.
pub fn char_similarity_prefix(a: &str, b: &str, limit: usize) -> f64 {
    let a: Vec<char> = a.chars().take(limit).collect();
    let b: Vec<char> = b.chars().take(limit).collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / longest as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DedupConfig {
    pub k_text: usize,
    pub k_code: usize,
    pub perms: usize,
    pub bands: usize,
    pub rows: usize,
    pub candidate_threshold: f64,
    pub confirm_threshold: f64,
    pub char_prefix: usize,
    pub seed: u64,
    /// Documents shorter than the shingle width are kept when true.
    pub keep_unshingleable: bool,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            k_text: 5,
            k_code: 10,
            perms: 256,
            bands: 32,
            rows: 8,
            candidate_threshold: 0.8,
            confirm_threshold: 0.85,
            char_prefix: 4096,
            seed: 0,
            keep_unshingleable: true,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bands * self.rows != self.perms {
            return Err(ForgeError::Config(format!(
                "bands x rows = {} x {} must equal perms = {}",
                self.bands, self.rows, self.perms
            )));
        }
        if self.k_text == 0 || self.k_code == 0 {
            return Err(ForgeError::Config("shingle width must be at least 1".into()));
        }
        Ok(())
    }

    pub fn k_for(&self, modality: Modality) -> usize {
        match modality {
            Modality::Text => self.k_text,
            Modality::Code => self.k_code,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub dropped: String,
    pub kept: String,
    pub est_jaccard: f64,
    pub char_sim: f64,
}

#[derive(Debug, Clone)]
pub struct DedupOutcome {
    pub kept: Vec<Document>,
    pub report: Vec<DropRecord>,
    pub unshingleable: Vec<String>,
    pub candidate_pairs: usize,
}

pub fn document_shingles(doc: &Document, cfg: &DedupConfig) -> Result<ShingleSet> {
    let probe = Tokenizer::from_vocab(Vec::new());
    let tokens: Vec<String> = probe.tokens_for(&doc.content, doc.modality).into_iter().map(|t| t.text).collect();
    shingle(&doc.id, &tokens, cfg.k_for(doc.modality))
}

/// Drops the later member of every candidate pair that passes both the
/// estimated-Jaccard and character-similarity thresholds. Documents are only
/// compared within one modality.
pub fn dedup_corpus(documents: &[Document], cfg: &DedupConfig) -> Result<DedupOutcome> {
    cfg.validate()?;
    let signatures: Vec<Option<MinHashSignature>> = documents
        .par_iter()
        .map(|doc| {
            let set = document_shingles(doc, cfg)?;
            if set.is_empty() {
                return Ok(None);
            }
            minhash_signature(&set, cfg.perms, cfg.seed).map(Some)
        })
        .collect::<Result<_>>()?;

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for modality in [Modality::Text, Modality::Code] {
        let members: Vec<usize> = (0..documents.len())
            .filter(|&i| documents[i].modality == modality && signatures[i].is_some())
            .collect();
        let refs: Vec<&MinHashSignature> = members.iter().map(|&i| signatures[i].as_ref().expect("filtered")).collect();
        let index = LshIndex::build(&refs, cfg.bands, cfg.rows)?;
        pairs.extend(index.candidate_pairs().into_iter().map(|(a, b)| (members[a], members[b])));
    }
    pairs.sort_unstable();
    let candidate_pairs = pairs.len();

    let scored: Vec<Option<DropRecord>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (signatures[i].as_ref().expect("indexed"), signatures[j].as_ref().expect("indexed"));
            let est = estimate_jaccard(a, b)?;
            if est < cfg.candidate_threshold {
                return Ok(None);
            }
            let sim = char_similarity_prefix(&documents[i].content, &documents[j].content, cfg.char_prefix);
            Ok((sim >= cfg.confirm_threshold).then(|| DropRecord {
                dropped: documents[j].id.clone(),
                kept: documents[i].id.clone(),
                est_jaccard: est,
                char_sim: sim,
            }))
        })
        .collect::<Result<_>>()?;

    let mut dropped = vec![false; documents.len()];
    let mut report = Vec::new();
    for (&(i, j), rec) in pairs.iter().zip(scored) {
        if let Some(rec) = rec {
            if !dropped[i] && !dropped[j] {
                dropped[j] = true;
                report.push(rec);
            }
        }
    }

    let mut unshingleable = Vec::new();
    for (i, sig) in signatures.iter().enumerate() {
        if sig.is_none() {
            unshingleable.push(documents[i].id.clone());
            if !cfg.keep_unshingleable {
                dropped[i] = true;
            }
        }
    }
    let kept = documents.iter().zip(&dropped).filter(|(_, &d)| !d).map(|(doc, _)| doc.clone()).collect();
    Ok(DedupOutcome { kept, report, unshingleable, candidate_pairs })
}
