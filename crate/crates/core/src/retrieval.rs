//! Exact cosine index over bi-encoder embeddings, cross-encoder reranking and
//! the composed two-stage retriever.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{pair_input, EncoderParams};
use crate::error::{ForgeError, Result};
use crate::ingest::{is_structural, CLS, SEP};
use crate::metrics::{Qrels, Rankings};

pub const INDEX_MAGIC: &[u8; 8] = b"FRGIDX01";
pub const INDEX_VERSION: u32 = 1;
const NORM_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// Scores non-increasing, ties by ascending doc id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<ScoredDoc>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.doc_id.clone()).collect()
    }

    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.doc_id == doc_id)
    }
}

fn by_score_then_id(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// `CLS content SEP`, truncated to `max_len`.
pub fn wrap_sequence(content: &[u32], max_len: usize) -> Vec<u32> {
    let keep = content.len().min(max_len.saturating_sub(2));
    let mut ids = Vec::with_capacity(keep + 2);
    ids.push(CLS);
    ids.extend_from_slice(&content[..keep]);
    ids.push(SEP);
    ids
}

pub fn strip_structural(ids: &[u32]) -> Vec<u32> {
    ids.iter().copied().filter(|&id| !is_structural(id)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    pub ids: Vec<String>,
    /// One unit-norm row per document.
    pub matrix: Array2<f64>,
    pub checkpoint_hash: String,
}

impl EmbeddingIndex {
    /// Embeds every `(doc id, encoded sequence)` in parallel; row order follows the input.
    pub fn build(params: &EncoderParams, docs: &[(String, Vec<u32>)], checkpoint_hash: &str) -> Result<Self> {
        if docs.is_empty() {
            return Err(ForgeError::Indexing("no documents to index".into()));
        }
        let rows: Vec<Result<Array1<f64>>> = docs
            .par_iter()
            .map(|(id, seq)| {
                params.embed(seq).map_err(|e| match e {
                    ForgeError::Input(msg) | ForgeError::Shape(msg) => {
                        ForgeError::Indexing(format!("document `{id}`: {msg}"))
                    }
                    other => other,
                })
            })
            .collect();
        let mut matrix = Array2::zeros((docs.len(), params.config.d_model));
        for (i, r) in rows.into_iter().enumerate() {
            matrix.row_mut(i).assign(&r?);
        }
        Self::from_parts(docs.iter().map(|(id, _)| id.clone()).collect(), matrix, checkpoint_hash)
    }

    pub fn from_parts(ids: Vec<String>, matrix: Array2<f64>, checkpoint_hash: &str) -> Result<Self> {
        if ids.len() != matrix.nrows() {
            return Err(ForgeError::Indexing(format!("{} ids for {} rows", ids.len(), matrix.nrows())));
        }
        let mut seen = BTreeSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(ForgeError::Indexing(format!("duplicate doc id `{id}`")));
            }
        }
        for (i, row) in matrix.rows().into_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if !n.is_finite() || (n - 1.0).abs() > NORM_TOL {
                return Err(ForgeError::Indexing(format!("row for `{}` has norm {n}", ids[i])));
            }
        }
        Ok(Self { ids, matrix, checkpoint_hash: checkpoint_hash.to_string() })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.ids.iter().any(|i| i == doc_id)
    }

    /// Exact top-k by dot product; `k` larger than the corpus returns everything.
    pub fn search_topk(&self, query: ArrayView1<f64>, k: usize) -> Result<RankedList> {
        if k == 0 {
            return Err(ForgeError::Config("k must be at least 1".into()));
        }
        if query.len() != self.dim() {
            return Err(ForgeError::Shape(format!("query has dim {}, index has {}", query.len(), self.dim())));
        }
        let scores = self.matrix.dot(&query);
        let mut entries: Vec<ScoredDoc> =
            self.ids.iter().zip(scores.iter()).map(|(id, &s)| ScoredDoc { doc_id: id.clone(), score: s }).collect();
        entries.sort_by(by_score_then_id);
        entries.truncate(k);
        Ok(RankedList { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes()?)?;
        f.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let hash = hex::decode(&self.checkpoint_hash)
            .ok()
            .filter(|h| h.len() == 32)
            .ok_or_else(|| ForgeError::Format(format!("checkpoint hash `{}` is not sha256 hex", self.checkpoint_hash)))?;
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&hash);
        for &x in self.matrix.iter() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Cursor { buf, at: 0 };
        if r.take(8)? != INDEX_MAGIC {
            return Err(ForgeError::Format("not an index file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(ForgeError::Format(format!("unsupported index version {version}")));
        }
        let n = usize::try_from(r.u64()?).map_err(|_| ForgeError::Format("row count overflow".into()))?;
        let d = r.u32()? as usize;
        let hash = hex::encode(r.take(32)?);
        let raw = r.take(n.checked_mul(d).and_then(|x| x.checked_mul(4)).ok_or_else(|| {
            ForgeError::Format("index dimensions overflow".into())
        })?)?;
        let data: Vec<f64> =
            raw.chunks_exact(4).map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("four bytes")))).collect();
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u32()? as usize;
            let s = std::str::from_utf8(r.take(len)?).map_err(|e| ForgeError::Format(format!("doc id: {e}")))?;
            ids.push(s.to_string());
        }
        if r.at != buf.len() {
            return Err(ForgeError::Format("trailing bytes after id table".into()));
        }
        let matrix = Array2::from_shape_vec((n, d), data).map_err(|e| ForgeError::Format(e.to_string()))?;
        Self::from_parts(ids, matrix, &hash)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .at
            .checked_add(n)
            .and_then(|end| self.buf.get(self.at..end))
            .ok_or_else(|| ForgeError::Format("index file is truncated".into()))?;
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
}

/// Relevance of a query (content ids, no specials) to a stored document.
pub trait PairScorer: Sync {
    fn score(&self, query: &[u32], doc_id: &str) -> Result<f64>;
}

pub struct CrossEncoderScorer<'a> {
    pub params: &'a EncoderParams,
    /// Document content ids without structural tokens.
    pub docs: &'a BTreeMap<String, Vec<u32>>,
    pub max_len: usize,
}

impl PairScorer for CrossEncoderScorer<'_> {
    fn score(&self, query: &[u32], doc_id: &str) -> Result<f64> {
        let doc = self.docs.get(doc_id).ok_or_else(|| ForgeError::Evaluation(format!("unknown document `{doc_id}`")))?;
        self.params.cross_score(&pair_input(query, doc, self.max_len)?)
    }
}

/// Rescores every candidate, sorts by score (prior rank breaks ties) and keeps `k2`.
pub fn rerank(scorer: &dyn PairScorer, query: &[u32], candidates: &RankedList, k2: usize) -> Result<RankedList> {
    if candidates.is_empty() {
        return Err(ForgeError::Evaluation("no candidates to rerank".into()));
    }
    if k2 == 0 || k2 > candidates.len() {
        return Err(ForgeError::Config(format!("k2 = {k2} with {} candidates", candidates.len())));
    }
    let scores: Vec<Result<f64>> = candidates.entries.par_iter().map(|c| scorer.score(query, &c.doc_id)).collect();
    let mut scored = Vec::with_capacity(candidates.len());
    for (rank, (c, s)) in candidates.entries.iter().zip(scores).enumerate() {
        scored.push((rank, ScoredDoc { doc_id: c.doc_id.clone(), score: s? }));
    }
    scored.sort_by(|(ra, a), (rb, b)| b.score.total_cmp(&a.score).then(ra.cmp(rb)));
    Ok(RankedList { entries: scored.into_iter().take(k2).map(|(_, d)| d).collect() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageResult {
    pub stage1: RankedList,
    pub reranked: RankedList,
}

/// Bi-encoder top-`k1` followed by cross-encoder rerank to `k2`.
pub fn two_stage_retrieve(
    index: &EmbeddingIndex,
    bi: &EncoderParams,
    scorer: &dyn PairScorer,
    query: &[u32],
    k1: usize,
    k2: usize,
) -> Result<TwoStageResult> {
    if k2 > k1 {
        return Err(ForgeError::Config(format!("k2 = {k2} exceeds k1 = {k1}")));
    }
    let q = bi.embed(&wrap_sequence(query, bi.config.max_len))?;
    let stage1 = index.search_topk(q.view(), k1)?;
    let reranked = rerank(scorer, query, &stage1, k2.min(stage1.len()))?;
    Ok(TwoStageResult { stage1, reranked })
}

/// Stage-1 rankings for many queries (content ids, no specials).
pub fn retrieve_all(
    index: &EmbeddingIndex,
    bi: &EncoderParams,
    queries: &[(String, Vec<u32>)],
    k: usize,
) -> Result<BTreeMap<String, RankedList>> {
    let lists: Vec<Result<RankedList>> = queries
        .par_iter()
        .map(|(_, q)| {
            let e = bi.embed(&wrap_sequence(q, bi.config.max_len))?;
            index.search_topk(e.view(), k)
        })
        .collect();
    queries.iter().zip(lists).map(|((id, _), l)| Ok((id.clone(), l?))).collect()
}

pub fn two_stage_all(
    index: &EmbeddingIndex,
    bi: &EncoderParams,
    scorer: &dyn PairScorer,
    queries: &[(String, Vec<u32>)],
    k1: usize,
    k2: usize,
) -> Result<BTreeMap<String, TwoStageResult>> {
    let mut out = BTreeMap::new();
    for (id, q) in queries {
        out.insert(id.clone(), two_stage_retrieve(index, bi, scorer, q, k1, k2)?);
    }
    Ok(out)
}

pub fn to_rankings<'a, I>(lists: I) -> Rankings
where
    I: IntoIterator<Item = (&'a String, &'a RankedList)>,
{
    lists.into_iter().map(|(q, l)| (q.clone(), l.ids())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrelLine {
    pub query_id: String,
    pub relevant_doc_ids: Vec<String>,
}

pub fn read_qrels(path: &Path) -> Result<Qrels> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Qrels::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QrelLine = serde_json::from_str(&line)
            .map_err(|e| ForgeError::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.entry(q.query_id).or_default().extend(q.relevant_doc_ids);
    }
    Ok(out)
}

pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (q, rel) in qrels {
        let line = QrelLine { query_id: q.clone(), relevant_doc_ids: rel.iter().cloned().collect() };
        writeln!(f, "{}", serde_json::to_string(&line)?)?;
    }
    f.flush()?;
    Ok(())
}

/// Every relevant doc must exist in the index.
pub fn check_qrels(qrels: &Qrels, index: &EmbeddingIndex) -> Result<()> {
    let known: BTreeSet<&str> = index.ids.iter().map(String::as_str).collect();
    for (q, rel) in qrels {
        if let Some(missing) = rel.iter().find(|d| !known.contains(d.as_str())) {
            return Err(ForgeError::Evaluation(format!("query `{q}` references unknown document `{missing}`")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::ingest::PAD;
    use crate::seed::rng_from;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit_rows(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from(seed);
        let mut m = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0f64..1.0));
        for mut r in m.rows_mut() {
            let n: f64 = r.dot(&r);
            let n = n.sqrt();
            r /= n;
        }
        m
    }

    fn index_of(m: Array2<f64>) -> EmbeddingIndex {
        let ids = (0..m.nrows()).map(|i| format!("d{i:02}")).collect();
        EmbeddingIndex::from_parts(ids, m, &"ab".repeat(32)).unwrap()
    }

    struct Fixed(BTreeMap<String, f64>);

    impl PairScorer for Fixed {
        fn score(&self, _: &[u32], doc_id: &str) -> Result<f64> {
            Ok(self.0.get(doc_id).copied().unwrap_or(0.0))
        }
    }

    fn list(ids: &[&str]) -> RankedList {
        RankedList {
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, d)| ScoredDoc { doc_id: d.to_string(), score: 1.0 - i as f64 * 0.1 })
                .collect(),
        }
    }

    #[test]
    fn topk_matches_exhaustive_sort() {
        for seed in 0..10 {
            let idx = index_of(unit_rows(20, 8, seed));
            let q = unit_rows(1, 8, 100 + seed).row(0).to_owned();
            let got = idx.search_topk(q.view(), 7).unwrap();
            // oracle: explicit loop of dot products, pairwise selection
            let mut all: Vec<(f64, String)> = (0..20)
                .map(|i| {
                    let mut s = 0.0;
                    for j in 0..8 {
                        s += idx.matrix[[i, j]] * q[j];
                    }
                    (s, idx.ids[i].clone())
                })
                .collect();
            let mut want = Vec::new();
            for _ in 0..7 {
                let mut best = 0;
                for i in 1..all.len() {
                    if all[i].0 > all[best].0 || (all[i].0 == all[best].0 && all[i].1 < all[best].1) {
                        best = i;
                    }
                }
                want.push(all.remove(best).1);
            }
            assert_eq!(got.ids(), want);
        }
    }

    #[test]
    fn stored_embedding_ranks_itself_first() {
        let idx = index_of(unit_rows(12, 6, 3));
        let got = idx.search_topk(idx.matrix.row(5), 3).unwrap();
        assert_eq!(got.entries[0].doc_id, "d05");
        assert!((got.entries[0].score - 1.0).abs() < 1e-12);
        assert_eq!(idx.search_topk(idx.matrix.row(0), 50).unwrap().len(), 12);
        assert!(idx.search_topk(idx.matrix.row(0), 0).is_err());
    }

    #[test]
    fn ties_break_by_doc_id() {
        let m = Array2::from_shape_vec((3, 2), vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let idx = EmbeddingIndex::from_parts(vec!["z".into(), "m".into(), "a".into()], m, "").unwrap();
        let q = ndarray::arr1(&[1.0, 0.0]);
        assert_eq!(idx.search_topk(q.view(), 3).unwrap().ids(), vec!["a", "z", "m"]);
    }

    #[test]
    fn rejects_bad_rows_and_ids() {
        let m = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.5, 0.0]).unwrap();
        assert!(matches!(EmbeddingIndex::from_parts(vec!["a".into(), "b".into()], m, ""), Err(ForgeError::Indexing(_))));
        let m = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(EmbeddingIndex::from_parts(vec!["a".into(), "a".into()], m, "").is_err());
    }

    #[test]
    fn build_embeds_rows_and_names_bad_docs() {
        let cfg = EncoderConfig { vocab_size: 20, d_model: 8, n_heads: 2, n_layers: 1, d_ff: 8, max_len: 16, ..Default::default() };
        let p = EncoderParams::init(cfg, 1).unwrap();
        let docs: Vec<(String, Vec<u32>)> =
            (0..6).map(|i| (format!("doc{i}"), wrap_sequence(&[6 + i, 7 + i, 9], 16))).collect();
        let a = EmbeddingIndex::build(&p, &docs, "h").unwrap();
        let b = EmbeddingIndex::build(&p, &docs, "h").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        let e = p.embed(&docs[3].1).unwrap();
        assert!(a.matrix.row(3).iter().zip(e.iter()).all(|(x, y)| x == y));
        let mut bad = docs.clone();
        bad.push(("blank".into(), vec![PAD, PAD]));
        match EmbeddingIndex::build(&p, &bad, "h") {
            Err(ForgeError::Indexing(m)) => assert!(m.contains("blank")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn index_file_round_trip() {
        let idx = index_of(unit_rows(9, 5, 8));
        let bytes = idx.to_bytes().unwrap();
        let back = EmbeddingIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back.ids, idx.ids);
        assert_eq!(back.checkpoint_hash, idx.checkpoint_hash);
        assert!(back.matrix.iter().zip(idx.matrix.iter()).all(|(a, b)| (*b as f32) as f64 == *a));
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert!(EmbeddingIndex::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn rerank_follows_score_sort() {
        let cands = list(&["a", "b", "c", "d", "e"]);
        let scores: BTreeMap<String, f64> =
            [("a", 0.1), ("b", 0.9), ("c", 0.5), ("d", 0.9), ("e", 0.7)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let got = rerank(&Fixed(scores.clone()), &[5], &cands, 5).unwrap();
        // oracle: insertion sort by (score desc, prior rank asc)
        let mut want: Vec<(f64, usize, &str)> = Vec::new();
        for (r, id) in ["a", "b", "c", "d", "e"].iter().enumerate() {
            let s = scores[*id];
            let pos = want.iter().position(|(ws, wr, _)| s > *ws || (s == *ws && r < *wr)).unwrap_or(want.len());
            want.insert(pos, (s, r, id));
        }
        assert_eq!(got.ids(), want.iter().map(|w| w.2.to_string()).collect::<Vec<_>>());
        assert_eq!(rerank(&Fixed(scores), &[5], &cands, 2).unwrap().ids(), vec!["b", "d"]);
        let one = list(&["x"]);
        assert_eq!(rerank(&Fixed(BTreeMap::new()), &[5], &one, 1).unwrap().ids(), vec!["x"]);
        assert!(rerank(&Fixed(BTreeMap::new()), &[5], &one, 2).is_err());
    }

    fn tiny_models() -> (EncoderParams, EmbeddingIndex, BTreeMap<String, Vec<u32>>) {
        let cfg = EncoderConfig { vocab_size: 30, d_model: 8, n_heads: 2, n_layers: 1, d_ff: 8, max_len: 16, ..Default::default() };
        let bi = EncoderParams::init(cfg, 2).unwrap();
        let content: BTreeMap<String, Vec<u32>> =
            (0..10u32).map(|i| (format!("d{i}"), vec![6 + i, 8 + 2 * i % 20, 7])).collect();
        let docs: Vec<(String, Vec<u32>)> = content.iter().map(|(k, v)| (k.clone(), wrap_sequence(v, 16))).collect();
        let idx = EmbeddingIndex::build(&bi, &docs, &"00".repeat(32)).unwrap();
        (bi, idx, content)
    }

    #[test]
    fn constant_scores_keep_stage1_order() {
        let (bi, idx, _) = tiny_models();
        let flat = Fixed(BTreeMap::new());
        let r = two_stage_retrieve(&idx, &bi, &flat, &[9, 10], idx.len(), 4).unwrap();
        assert_eq!(r.stage1.len(), idx.len());
        assert_eq!(r.reranked.ids(), r.stage1.ids()[..4].to_vec());
        let full = two_stage_retrieve(&idx, &bi, &flat, &[9, 10], idx.len(), idx.len()).unwrap();
        assert_eq!(full.reranked.ids(), full.stage1.ids());
        assert!(two_stage_retrieve(&idx, &bi, &flat, &[9], 3, 4).is_err());
    }

    #[test]
    fn reranking_lifts_buried_positive() {
        // The bi-encoder stage puts a decoy first; the pair scorer knows the answer.
        let (bi, idx, _) = tiny_models();
        let q = [11u32, 12];
        let stage1 = two_stage_retrieve(&idx, &bi, &Fixed(BTreeMap::new()), &q, 10, 10).unwrap().stage1;
        let positive = stage1.entries[6].doc_id.clone();
        let mut scores = BTreeMap::new();
        scores.insert(positive.clone(), 0.95);
        scores.insert(stage1.entries[0].doc_id.clone(), 0.4);
        let r = two_stage_retrieve(&idx, &bi, &Fixed(scores), &q, 10, 5).unwrap();
        assert_eq!(r.stage1.rank_of(&positive), Some(6));
        assert_eq!(r.reranked.rank_of(&positive), Some(0));
    }

    #[test]
    fn cross_scorer_runs_on_real_model() {
        let (bi, idx, content) = tiny_models();
        let scorer = CrossEncoderScorer { params: &bi, docs: &content, max_len: 16 };
        let r = two_stage_retrieve(&idx, &bi, &scorer, &[9, 10], 6, 3).unwrap();
        assert_eq!(r.reranked.len(), 3);
        assert!(r.reranked.entries.iter().all(|e| r.stage1.rank_of(&e.doc_id).is_some()));
        assert!(r.reranked.entries.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn qrels_round_trip_and_check() {
        let dir = std::env::temp_dir().join(format!("qrels-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("q.jsonl");
        let mut q = Qrels::new();
        q.insert("q1".into(), ["d01".to_string(), "d03".to_string()].into());
        q.insert("q2".into(), ["d00".to_string()].into());
        write_qrels(&path, &q).unwrap();
        assert_eq!(read_qrels(&path).unwrap(), q);
        let idx = index_of(unit_rows(4, 3, 1));
        assert!(check_qrels(&q, &idx).is_ok());
        q.get_mut("q2").unwrap().insert("d99".into());
        assert!(matches!(check_qrels(&q, &idx), Err(ForgeError::Evaluation(_))));
        std::fs::remove_dir_all(dir).unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rerank_output_is_subset(scores in proptest::collection::vec(0.0f64..1.0, 1..12), k in 1usize..12) {
            let ids: Vec<String> = (0..scores.len()).map(|i| format!("c{i}")).collect();
            let cands = RankedList { entries: ids.iter().map(|d| ScoredDoc { doc_id: d.clone(), score: 0.0 }).collect() };
            let k = k.min(scores.len());
            let fixed = Fixed(ids.iter().cloned().zip(scores.iter().copied()).collect());
            let out = rerank(&fixed, &[5], &cands, k).unwrap();
            prop_assert_eq!(out.len(), k);
            let set: BTreeSet<String> = out.ids().into_iter().collect();
            prop_assert_eq!(set.len(), k);
            prop_assert!(set.iter().all(|d| ids.contains(d)));
            prop_assert!(out.entries.windows(2).all(|w| w[0].score >= w[1].score));
        }

        #[test]
        fn topk_is_prefix_of_full_order(seed in 0u64..500, k in 1usize..25) {
            let idx = index_of(unit_rows(15, 4, seed));
            let q = unit_rows(1, 4, seed + 7).row(0).to_owned();
            let full = idx.search_topk(q.view(), 15).unwrap();
            let top = idx.search_topk(q.view(), k).unwrap();
            prop_assert_eq!(top.ids(), full.ids()[..k.min(15)].to_vec());
            prop_assert!(full.entries.windows(2).all(|w| by_score_then_id(&w[0], &w[1]) != Ordering::Greater));
        }
    }
}
