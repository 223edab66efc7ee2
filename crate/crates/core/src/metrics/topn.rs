use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

pub const TOPN_LEVELS: [usize; 6] = [1, 2, 3, 4, 5, 10];

/// Fraction of examples whose gold is among the first `n` predictions, for
/// each requested `n`.
pub fn topn_accuracy<T: PartialEq>(predictions: &[Vec<T>], golds: &[T], ns: &[usize]) -> Result<Vec<(usize, f64)>> {
    if predictions.len() != golds.len() {
        return Err(ForgeError::Evaluation(format!("{} predictions for {} golds", predictions.len(), golds.len())));
    }
    let max_n = ns.iter().copied().max().unwrap_or(0);
    if let Some(i) = predictions.iter().position(|p| p.len() < max_n) {
        return Err(ForgeError::Evaluation(format!(
            "prediction list {i} has {} entries, fewer than n = {max_n}",
            predictions[i].len()
        )));
    }
    let ranks: Vec<Option<usize>> = predictions.iter().zip(golds).map(|(p, g)| p.iter().position(|x| x == g)).collect();
    Ok(ns
        .iter()
        .map(|&n| {
            let hits = ranks.iter().filter(|r| r.is_some_and(|r| r < n)).count();
            (n, if golds.is_empty() { 0.0 } else { hits as f64 / golds.len() as f64 })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopNRow {
    pub top_n: usize,
    pub objects: f64,
    pub verbs: f64,
    pub code: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopNReport {
    pub schema: String,
    pub rows: Vec<TopNRow>,
    pub examples: [usize; 3],
}

impl TopNReport {
    pub fn new(objects: &[(usize, f64)], verbs: &[(usize, f64)], code: &[(usize, f64)], examples: [usize; 3]) -> Self {
        let rows = objects
            .iter()
            .zip(verbs)
            .zip(code)
            .map(|((o, v), c)| TopNRow { top_n: o.0, objects: o.1, verbs: v.1, code: c.1 })
            .collect();
        Self { schema: "table3_mlm".into(), rows, examples }
    }

    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].objects <= w[1].objects && w[0].verbs <= w[1].verbs && w[0].code <= w[1].code)
    }

    pub fn render(&self) -> String {
        let mut s = format!("{:>6} {:>9} {:>9} {:>9}\n", "top-n", "objects", "verbs", "code");
        for r in &self.rows {
            s += &format!("{:>6} {:>8.2}% {:>8.2}% {:>8.2}%\n", r.top_n, 100.0 * r.objects, 100.0 * r.verbs, 100.0 * r.code);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ranked_with_gold_at(rank: usize) -> Vec<u32> {
        // gold is 0; fillers are 100..
        (1..=12).map(|r| if r == rank { 0 } else { 100 + r as u32 }).collect()
    }

    #[test]
    fn hand_counted_ranks() {
        let preds = vec![ranked_with_gold_at(1), ranked_with_gold_at(3), ranked_with_gold_at(11)];
        let acc = topn_accuracy(&preds, &[0, 0, 0], &TOPN_LEVELS).unwrap();
        let at = |n| acc.iter().find(|(k, _)| *k == n).unwrap().1;
        assert!((at(1) - 1.0 / 3.0).abs() < 1e-12);
        assert!((at(5) - 2.0 / 3.0).abs() < 1e-12);
        assert!((at(10) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gold_first_everywhere() {
        let preds = vec![ranked_with_gold_at(1); 4];
        let acc = topn_accuracy(&preds, &[0; 4], &TOPN_LEVELS).unwrap();
        assert!(acc.iter().all(|(_, a)| *a == 1.0));
    }

    #[test]
    fn short_lists_error() {
        assert!(matches!(topn_accuracy(&[vec![1u32, 2]], &[1], &TOPN_LEVELS), Err(ForgeError::Evaluation(_))));
    }

    #[test]
    fn report_shape() {
        let a: Vec<(usize, f64)> = TOPN_LEVELS.iter().map(|&n| (n, n as f64 / 10.0)).collect();
        let r = TopNReport::new(&a, &a, &a, [1, 1, 1]);
        assert_eq!(r.schema, "table3_mlm");
        assert_eq!(r.rows.len(), 6);
        assert!(r.is_monotone());
        assert!(r.render().contains("100.00%"));
    }

    proptest! {
        #[test]
        fn accuracy_is_monotone(ranks in prop::collection::vec(1usize..=12, 1..40)) {
            let preds: Vec<Vec<u32>> = ranks.iter().map(|&r| ranked_with_gold_at(r)).collect();
            let golds = vec![0u32; ranks.len()];
            let acc = topn_accuracy(&preds, &golds, &TOPN_LEVELS).unwrap();
            prop_assert!(acc.windows(2).all(|w| w[0].1 <= w[1].1));
            prop_assert!(acc.iter().all(|(_, a)| (0.0..=1.0).contains(a)));
        }
    }
}
