use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Ranked document ids per query id.
pub type Rankings = BTreeMap<String, Vec<String>>;
/// Relevant document ids per query id.
pub type Qrels = BTreeMap<String, BTreeSet<String>>;

/// Precision at each relevant hit, summed and divided by the number of
/// relevant documents. `None` when nothing is relevant.
pub fn average_precision(ranking: &[String], relevant: &BTreeSet<String>) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranking.iter().enumerate() {
        if relevant.contains(d) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / relevant.len() as f64)
}

fn reciprocal_rank(ranking: &[String], relevant: &BTreeSet<String>, k: usize) -> f64 {
    ranking.iter().take(k).position(|d| relevant.contains(d)).map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

fn ndcg(ranking: &[String], relevant: &BTreeSet<String>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, d)| relevant.contains(*d))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..relevant.len().min(k)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    Some(dcg / idcg)
}

/// Per-query values for the queries that have a non-empty relevant set;
/// other queries are reported in `flags`.
fn per_query<F: Fn(&[String], &BTreeSet<String>) -> f64>(
    rankings: &Rankings,
    qrels: &Qrels,
    f: F,
    flags: &mut Vec<String>,
) -> Vec<f64> {
    let mut out = Vec::new();
    for (q, ranking) in rankings {
        match qrels.get(q) {
            None => flags.push(format!("query `{q}` has no qrels entry, skipped")),
            Some(rel) if rel.is_empty() => flags.push(format!("query `{q}` has no relevant documents, skipped")),
            Some(rel) => out.push(f(ranking, rel)),
        }
    }
    out
}

fn mean(v: &[f64], what: &str, flags: &mut Vec<String>) -> f64 {
    if v.is_empty() {
        flags.push(format!("{what}: no evaluable queries, reported as 0"));
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn mean_average_precision(rankings: &Rankings, qrels: &Qrels, flags: &mut Vec<String>) -> f64 {
    let v = per_query(rankings, qrels, |r, rel| average_precision(r, rel).unwrap_or(0.0), flags);
    mean(&v, "mAP", flags)
}

pub fn mrr_at_k(rankings: &Rankings, qrels: &Qrels, k: usize, flags: &mut Vec<String>) -> f64 {
    let v = per_query(rankings, qrels, |r, rel| reciprocal_rank(r, rel, k), flags);
    mean(&v, "MRR", flags)
}

pub fn ndcg_at_k(rankings: &Rankings, qrels: &Qrels, k: usize, flags: &mut Vec<String>) -> f64 {
    let v = per_query(rankings, qrels, |r, rel| ndcg(r, rel, k).unwrap_or(0.0), flags);
    mean(&v, "NDCG", flags)
}

pub fn recall_at_1(rankings: &Rankings, qrels: &Qrels, flags: &mut Vec<String>) -> f64 {
    let v = per_query(rankings, qrels, |r, rel| f64::from(r.first().is_some_and(|d| rel.contains(d)) as u8), flags);
    mean(&v, "R@1", flags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub schema: String,
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "R@1")]
    pub r_at_1: f64,
    #[serde(rename = "NDCG@10", default, skip_serializing_if = "Option::is_none")]
    pub ndcg_at_10: Option<f64>,
    #[serde(rename = "MRR@10")]
    pub mrr_at_10: f64,
    pub queries: usize,
    pub flags: Vec<String>,
}

/// All retrieval metrics; `with_ndcg` selects the cross-encoder layout.
pub fn evaluate_rankings(rankings: &Rankings, qrels: &Qrels, with_ndcg: bool) -> RetrievalReport {
    let mut flags = Vec::new();
    let map = mean_average_precision(rankings, qrels, &mut flags);
    // The remaining metrics skip the same queries; keep one copy of those flags.
    let mut scratch = Vec::new();
    let r_at_1 = recall_at_1(rankings, qrels, &mut scratch);
    let mrr_at_10 = mrr_at_k(rankings, qrels, 10, &mut scratch);
    let ndcg_at_10 = with_ndcg.then(|| ndcg_at_k(rankings, qrels, 10, &mut scratch));
    let queries = rankings.keys().filter(|q| qrels.get(*q).is_some_and(|r| !r.is_empty())).count();
    RetrievalReport {
        schema: if with_ndcg { "table_cross_encoder" } else { "table_bi_encoder" }.into(),
        map,
        r_at_1,
        ndcg_at_10,
        mrr_at_10,
        queries,
        flags,
    }
}

impl RetrievalReport {
    pub fn render(&self) -> String {
        let mut s = format!("mAP {:.4}  R@1 {:.4}  MRR@10 {:.4}", self.map, self.r_at_1, self.mrr_at_10);
        if let Some(n) = self.ndcg_at_10 {
            s += &format!("  NDCG@10 {n:.4}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn one(q: &[&str], rel: &[&str]) -> (Rankings, Qrels) {
        ([("q".to_string(), ids(q))].into(), [("q".to_string(), set(rel))].into())
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&ids(&["a", "b", "c"]), &set(&["a", "b"])), Some(1.0));
        let ap = average_precision(&ids(&["r1", "n", "r2"]), &set(&["r1", "r2"])).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&ids(&["x", "y"]), &set(&["a"])), Some(0.0));
        assert_eq!(average_precision(&ids(&["x"]), &set(&[])), None);
    }

    #[test]
    fn mrr_examples() {
        let mut f = vec![];
        let (r, q) = one(&["a", "b"], &["a"]);
        assert_eq!(mrr_at_k(&r, &q, 10, &mut f), 1.0);
        let (r, q) = one(&["x", "y", "a"], &["a"]);
        assert!((mrr_at_k(&r, &q, 10, &mut f) - 1.0 / 3.0).abs() < 1e-12);
        let mut long: Vec<String> = (0..10).map(|i| format!("n{i}")).collect();
        long.push("a".into());
        let r: Rankings = [("q".to_string(), long)].into();
        assert_eq!(mrr_at_k(&r, &q, 10, &mut f), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        let mut f = vec![];
        let (r, q) = one(&["a", "b", "x"], &["a", "b"]);
        assert!((ndcg_at_k(&r, &q, 10, &mut f) - 1.0).abs() < 1e-12);
        let (r, q) = one(&["a", "x", "b"], &["a", "b"]);
        let expect = 1.5 / (1.0 + 1.0 / 3f64.log2());
        assert!((ndcg_at_k(&r, &q, 10, &mut f) - expect).abs() < 1e-12);
        assert!((expect - 0.9197).abs() < 1e-4);
        let (r, q) = one(&["x", "y"], &["a"]);
        assert_eq!(ndcg_at_k(&r, &q, 10, &mut f), 0.0);
    }

    #[test]
    fn recall_examples() {
        let mut f = vec![];
        let r: Rankings = (0..4).map(|i| (format!("q{i}"), ids(&[if i < 3 { "hit" } else { "miss" }]))).collect();
        let q: Qrels = (0..4).map(|i| (format!("q{i}"), set(&["hit"]))).collect();
        assert_eq!(recall_at_1(&r, &q, &mut f), 0.75);
        assert!(f.is_empty());
        assert_eq!(recall_at_1(&Rankings::new(), &q, &mut f), 0.0);
        assert_eq!(f.len(), 1);
    }

    #[test]
    fn missing_and_empty_qrels_are_flagged() {
        let r: Rankings = [("a".to_string(), ids(&["x"])), ("b".to_string(), ids(&["x"])), ("c".to_string(), ids(&["x"]))].into();
        let q: Qrels = [("a".to_string(), set(&["x"])), ("b".to_string(), set(&[]))].into();
        let rep = evaluate_rankings(&r, &q, true);
        assert_eq!(rep.queries, 1);
        assert_eq!(rep.map, 1.0);
        assert_eq!(rep.flags.len(), 2);
    }

    #[test]
    fn report_keys() {
        let (r, q) = one(&["a"], &["a"]);
        let cross = serde_json::to_value(evaluate_rankings(&r, &q, true)).unwrap();
        for k in ["mAP", "R@1", "NDCG@10", "MRR@10"] {
            assert!(cross.get(k).is_some());
        }
        assert_eq!(cross["schema"], "table_cross_encoder");
        let bi = serde_json::to_value(evaluate_rankings(&r, &q, false)).unwrap();
        assert!(bi.get("NDCG@10").is_none());
        assert_eq!(bi["schema"], "table_bi_encoder");
    }

    fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = vec![];
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let x = rest.remove(i);
            for mut p in permutations(&rest) {
                p.insert(0, x);
                out.push(p);
            }
        }
        out
    }

    /// Direct-definition evaluator: AP as the mean over relevant docs of the
    /// precision at that doc's rank; IDCG as the best DCG over all orderings.
    #[test]
    fn exhaustive_agreement_with_direct_definitions() {
        let n = 6;
        let items: Vec<usize> = (0..n).collect();
        let perms = permutations(&items);
        for mask in 1u32..(1 << n) {
            let rel_idx: BTreeSet<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let rel: BTreeSet<String> = rel_idx.iter().map(|i| format!("d{i}")).collect();
            let dcg = |p: &[usize], k: usize| -> f64 {
                p.iter().take(k).enumerate().filter(|(_, d)| rel_idx.contains(d)).map(|(i, _)| 1.0 / ((i + 2) as f64).log2()).sum()
            };
            let k = 4;
            let best = perms.iter().map(|p| dcg(p, k)).fold(0.0f64, f64::max);
            for p in perms.iter().step_by(7) {
                let ranking: Vec<String> = p.iter().map(|i| format!("d{i}")).collect();
                let rank_of = |d: usize| p.iter().position(|x| *x == d).unwrap() + 1;
                let direct_ap = rel_idx
                    .iter()
                    .map(|&d| {
                        let r = rank_of(d);
                        rel_idx.iter().filter(|&&e| rank_of(e) <= r).count() as f64 / r as f64
                    })
                    .sum::<f64>()
                    / rel_idx.len() as f64;
                let ap = average_precision(&ranking, &rel).unwrap();
                assert!((ap - direct_ap).abs() < 1e-12);
                let sorted_first = p.iter().take(rel_idx.len()).all(|d| rel_idx.contains(d));
                assert_eq!((ap - 1.0).abs() < 1e-12, sorted_first);
                let direct_rr = rel_idx.iter().map(|&d| rank_of(d)).filter(|&r| r <= k).min().map_or(0.0, |r| 1.0 / r as f64);
                assert!((reciprocal_rank(&ranking, &rel, k) - direct_rr).abs() < 1e-12);
                assert!((ndcg(&ranking, &rel, k).unwrap() - dcg(p, k) / best).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn metrics_in_unit_interval(order in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(), mask in 0u32..256, k in 1usize..10) {
            let ranking: Vec<String> = order.iter().map(|i| format!("d{i}")).collect();
            let rel: BTreeSet<String> = (0..8).filter(|i| mask >> i & 1 == 1).map(|i| format!("d{i}")).collect();
            let r: Rankings = [("q".to_string(), ranking)].into();
            let q: Qrels = [("q".to_string(), rel)].into();
            let mut f = vec![];
            for v in [mean_average_precision(&r, &q, &mut f), mrr_at_k(&r, &q, k, &mut f), ndcg_at_k(&r, &q, k, &mut f), recall_at_1(&r, &q, &mut f)] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }
    }
}
