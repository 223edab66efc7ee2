//! Documents, corpus manifests and train/test split validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

/// Source category of a pretraining document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Seed,
    Web,
    Reasoning,
    Instruction,
    CodeVuln,
    Dialogue,
    Baseline,
    Synthetic,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Seed,
        Category::Web,
        Category::Reasoning,
        Category::Instruction,
        Category::CodeVuln,
        Category::Dialogue,
        Category::Baseline,
        Category::Synthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Seed => "seed",
            Category::Web => "web",
            Category::Reasoning => "reasoning",
            Category::Instruction => "instruction",
            Category::CodeVuln => "code_vuln",
            Category::Dialogue => "dialogue",
            Category::Baseline => "baseline",
            Category::Synthetic => "synthetic",
        }
    }

    /// Quality tier of the category. Only `synthetic` is configurable.
    pub fn tier(self, synthetic: QualityTier) -> QualityTier {
        match self {
            Category::Seed | Category::CodeVuln | Category::Baseline => QualityTier::High,
            Category::Reasoning | Category::Instruction | Category::Dialogue => QualityTier::Medium,
            Category::Web => QualityTier::Low,
            Category::Synthetic => synthetic,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = ForgeError;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| ForgeError::Config(format!("unknown source category `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityTier {
    Low,
    Medium,
    High,
}

impl QualityTier {
    /// Prior mass used by the curriculum's quality distribution.
    pub fn score(self) -> f64 {
        match self {
            QualityTier::High => 3.0,
            QualityTier::Medium => 2.0,
            QualityTier::Low => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Code,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source: Category,
    pub modality: Modality,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u64>,
}

impl Document {
    pub fn new(id: impl Into<String>, source: Category, modality: Modality, content: impl Into<String>) -> Self {
        Self { id: id.into(), source, modality, content: content.into(), token_count: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub code_tokens: u64,
    pub text_tokens: u64,
}

impl TokenCounts {
    pub fn total(&self) -> u64 {
        self.code_tokens + self.text_tokens
    }

    fn add(mut self, other: TokenCounts) -> Self {
        self.code_tokens += other.code_tokens;
        self.text_tokens += other.text_tokens;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounter {
    pub documents_in: u64,
    pub documents_out: u64,
    pub documents_dropped: u64,
}

impl StageCounter {
    pub fn new(documents_in: u64, documents_out: u64) -> Self {
        Self { documents_in, documents_out, documents_dropped: documents_in.saturating_sub(documents_out) }
    }

    pub fn is_balanced(&self) -> bool {
        self.documents_in == self.documents_out + self.documents_dropped
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: Category,
    pub code_tokens: u64,
    pub text_tokens: u64,
}

/// Per-category code/text token accounting plus pipeline stage counters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub tokenizer_version: String,
    pub categories: Vec<CategoryRow>,
    pub total: TokenCounts,
    pub stage_counters: BTreeMap<String, StageCounter>,
}

impl CorpusManifest {
    pub fn counts(&self, category: Category) -> Option<TokenCounts> {
        self.categories
            .iter()
            .find(|r| r.category == category)
            .map(|r| TokenCounts { code_tokens: r.code_tokens, text_tokens: r.text_tokens })
    }

    pub fn record_stage(&mut self, stage: &str, counter: StageCounter) {
        self.stage_counters.insert(stage.to_string(), counter);
    }

    /// Totals equal column sums and every stage balances.
    pub fn is_consistent(&self) -> bool {
        let sum = self.categories.iter().fold(TokenCounts::default(), |acc, r| {
            acc.add(TokenCounts { code_tokens: r.code_tokens, text_tokens: r.text_tokens })
        });
        sum == self.total && self.stage_counters.values().all(StageCounter::is_balanced)
    }
}

/// Sums token counts per category and modality.
///
/// The reduction is over integers, so the result does not depend on how rayon
/// partitions the input.
pub fn build_manifest(documents: &[Document], tokenizer_version: &str) -> Result<CorpusManifest> {
    if let Some(doc) = documents.iter().find(|d| d.token_count.is_none()) {
        return Err(ForgeError::Accounting(doc.id.clone()));
    }
    let per_category = documents
        .par_iter()
        .fold(BTreeMap::<Category, TokenCounts>::new, |mut acc, doc| {
            let n = doc.token_count.unwrap_or(0);
            let entry = acc.entry(doc.source).or_default();
            match doc.modality {
                Modality::Code => entry.code_tokens += n,
                Modality::Text => entry.text_tokens += n,
            }
            acc
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (k, v) in b {
                let e = a.entry(k).or_default();
                *e = e.add(v);
            }
            a
        });
    let total = per_category.values().fold(TokenCounts::default(), |acc, c| acc.add(*c));
    Ok(CorpusManifest {
        tokenizer_version: tokenizer_version.to_string(),
        categories: per_category
            .into_iter()
            .map(|(category, c)| CategoryRow { category, code_tokens: c.code_tokens, text_tokens: c.text_tokens })
            .collect(),
        total,
        stage_counters: BTreeMap::new(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub overlap: Vec<String>,
    pub out_of_corpus: Vec<String>,
}

impl SplitReport {
    pub fn is_valid(&self) -> bool {
        self.overlap.is_empty() && self.out_of_corpus.is_empty()
    }
}

pub fn validate_split(split: &DatasetSplit, corpus: &BTreeSet<String>) -> SplitReport {
    let overlap = split.train.intersection(&split.test).cloned().collect();
    let out_of_corpus = split
        .train
        .union(&split.test)
        .filter(|id| !corpus.contains(*id))
        .cloned()
        .collect();
    SplitReport { overlap, out_of_corpus }
}

/// Reads any JSON-Lines file into typed records. Blank lines are skipped.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path)?;
    read_jsonl_from(file)
}

pub fn read_jsonl_from<T: for<'de> Deserialize<'de>, R: Read>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| ForgeError::Format(format!("line {}: {e}", lineno + 1)))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a corpus and rejects duplicate ids.
pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let docs: Vec<Document> = read_jsonl(path)?;
    let mut seen = BTreeSet::new();
    for d in &docs {
        if !seen.insert(d.id.as_str()) {
            return Err(ForgeError::Input(format!("duplicate document id `{}`", d.id)));
        }
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(id: &str, source: Category, modality: Modality, n: u64) -> Document {
        let mut d = Document::new(id, source, modality, "x");
        d.token_count = Some(n);
        d
    }

    #[test]
    fn sums_by_modality() {
        let docs = vec![
            doc("a", Category::Seed, Modality::Text, 10),
            doc("b", Category::Seed, Modality::Text, 20),
            doc("c", Category::Seed, Modality::Code, 5),
        ];
        let m = build_manifest(&docs, "v1").unwrap();
        assert_eq!(m.counts(Category::Seed), Some(TokenCounts { code_tokens: 5, text_tokens: 30 }));
        assert_eq!(m.total, TokenCounts { code_tokens: 5, text_tokens: 30 });
    }

    #[test]
    fn empty_corpus_is_all_zero() {
        let m = build_manifest(&[], "v1").unwrap();
        assert_eq!(m.total, TokenCounts::default());
        assert!(m.categories.is_empty());
    }

    #[test]
    fn missing_token_count_names_document() {
        let docs = vec![Document::new("untok", Category::Web, Modality::Text, "hi")];
        match build_manifest(&docs, "v1") {
            Err(ForgeError::Accounting(id)) => assert_eq!(id, "untok"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn large_category_totals_sum_exactly() {
        // Billion-scale per-category counts.
        let rows = [
            (Category::Seed, 9_406_451, 256_859_788),
            (Category::Web, 268_993, 12_231_942_693),
            (Category::Reasoning, 0, 3_229_293),
            (Category::Instruction, 61_590, 2_336_218),
            (Category::CodeVuln, 2_146_875, 0),
            (Category::Dialogue, 41_503_749, 56_871_556),
            (Category::Baseline, 0, 1_072_798_637),
        ];
        let mut docs = Vec::new();
        for (i, (c, code, text)) in rows.iter().enumerate() {
            docs.push(doc(&format!("c{i}"), *c, Modality::Code, *code));
            docs.push(doc(&format!("t{i}"), *c, Modality::Text, *text));
        }
        let m = build_manifest(&docs, "v1").unwrap();
        assert_eq!(m.total.code_tokens, 53_387_658);
        assert_eq!(m.total.text_tokens, 13_624_038_185);
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn split_validation_cases() {
        let corpus = set(&["a", "b", "c"]);
        let ok = DatasetSplit { train: set(&["a", "b"]), test: set(&["c"]) };
        assert!(validate_split(&ok, &corpus).is_valid());

        let overlap = DatasetSplit { train: set(&["a", "b"]), test: set(&["b"]) };
        assert_eq!(validate_split(&overlap, &corpus).overlap, vec!["b".to_string()]);

        let outside = DatasetSplit { train: set(&["a"]), test: set(&["z"]) };
        let r = validate_split(&outside, &set(&["a", "b"]));
        assert_eq!(r.out_of_corpus, vec!["z".to_string()]);
        assert!(r.overlap.is_empty());
    }

    #[test]
    fn jsonl_corpus_round_trip_and_duplicate_ids() {
        let dir = std::env::temp_dir().join(format!("forge-corpus-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.jsonl");
        let docs = vec![
            Document::new("a", Category::Seed, Modality::Text, "hello"),
            Document::new("b", Category::CodeVuln, Modality::Code, "int x;"),
        ];
        write_jsonl(&path, &docs).unwrap();
        let line = std::fs::read_to_string(&path).unwrap();
        assert!(line.starts_with(r#"{"id":"a","source":"seed","modality":"text","content":"hello"}"#));
        assert_eq!(read_corpus(&path).unwrap(), docs);

        write_jsonl(&path, &[docs[0].clone(), docs[0].clone()]).unwrap();
        assert!(matches!(read_corpus(&path), Err(ForgeError::Input(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    fn arb_doc() -> impl Strategy<Value = Document> {
        (0usize..8, any::<bool>(), 0u64..10_000).prop_map(|(c, code, n)| {
            let modality = if code { Modality::Code } else { Modality::Text };
            doc("d", Category::ALL[c], modality, n)
        })
    }

    proptest! {
        #[test]
        fn manifest_is_consistent_and_order_free(mut docs in prop::collection::vec(arb_doc(), 0..60), rot in 0usize..60) {
            let m = build_manifest(&docs, "v").unwrap();
            prop_assert!(m.is_consistent());
            if !docs.is_empty() {
                let k = rot % docs.len();
                docs.rotate_left(k);
                docs.reverse();
            }
            prop_assert_eq!(build_manifest(&docs, "v").unwrap(), m);
        }

        #[test]
        fn overlap_empty_iff_disjoint(train in prop::collection::btree_set("[a-f]", 0..5), test in prop::collection::btree_set("[a-f]", 0..5)) {
            let corpus: BTreeSet<String> = train.union(&test).cloned().collect();
            let split = DatasetSplit { train: train.clone(), test: test.clone() };
            let r = validate_split(&split, &corpus);
            prop_assert_eq!(r.overlap.is_empty(), train.is_disjoint(&test));
        }
    }
}
