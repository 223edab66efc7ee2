use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ratio;
use crate::error::{ForgeError, Result};

pub const BIO_OUTSIDE: &str = "O";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Absent where true negatives are not defined (entity spans).
    pub tn: Option<u64>,
    pub accuracy: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl ClassificationReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: Option<u64>) -> Self {
        let mut flags = Vec::new();
        let precision = ratio(tp as f64, (tp + fp) as f64, "precision", &mut flags);
        let recall = ratio(tp as f64, (tp + fn_) as f64, "recall", &mut flags);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        let accuracy = tn.map(|tn| {
            let total = tp + fp + fn_ + tn;
            ratio((tp + tn) as f64, total as f64, "accuracy", &mut flags)
        });
        Self { tp, fp, fn_, tn, accuracy, precision, recall, f1, flags }
    }
}

/// Binary metrics with `true` ("vulnerable") as the positive class.
pub fn binary_cls_metrics(golds: &[bool], preds: &[bool]) -> Result<ClassificationReport> {
    if golds.is_empty() {
        return Err(ForgeError::Evaluation("no examples to score".into()));
    }
    if golds.len() != preds.len() {
        return Err(ForgeError::Evaluation(format!("{} predictions for {} golds", preds.len(), golds.len())));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&g, &p) in golds.iter().zip(preds) {
        match (g, p) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(ClassificationReport::from_counts(tp, fp, fn_, Some(tn)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NerMode {
    Token,
    Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerReport {
    pub mode: NerMode,
    #[serde(rename = "F1-score")]
    pub f1: f64,
    #[serde(rename = "Recall")]
    pub recall: f64,
    #[serde(rename = "Precision")]
    pub precision: f64,
    pub micro: ClassificationReport,
    pub per_label: BTreeMap<String, ClassificationReport>,
}

/// Entity type of a BIO label, `None` for outside.
fn entity_type(label: &str) -> Option<&str> {
    if label == BIO_OUTSIDE {
        return None;
    }
    Some(label.strip_prefix("B-").or_else(|| label.strip_prefix("I-")).unwrap_or(label))
}

/// Decodes BIO into `(type, first, last)` spans. An `I-` that does not
/// continue a span of the same type opens a new one.
pub(crate) fn bio_spans(labels: &[String]) -> BTreeSet<(String, usize, usize)> {
    let mut spans = BTreeSet::new();
    let mut open: Option<(String, usize)> = None;
    for (i, l) in labels.iter().enumerate() {
        let ty = entity_type(l);
        let continues = l.starts_with("I-") && open.as_ref().is_some_and(|(t, _)| Some(t.as_str()) == ty);
        if !continues {
            if let Some((t, s)) = open.take() {
                spans.insert((t, s, i - 1));
            }
            open = ty.map(|t| (t.to_string(), i));
        }
    }
    if let Some((t, s)) = open {
        spans.insert((t, s, labels.len() - 1));
    }
    spans
}

#[derive(Default, Clone, Copy)]
struct Counts {
    tp: u64,
    fp: u64,
    fn_: u64,
}

pub fn ner_prf(golds: &[Vec<String>], preds: &[Vec<String>], mode: NerMode) -> Result<NerReport> {
    if golds.len() != preds.len() {
        return Err(ForgeError::Evaluation(format!("{} predicted sequences for {} gold sequences", preds.len(), golds.len())));
    }
    let mut per: BTreeMap<String, Counts> = BTreeMap::new();
    for (i, (g, p)) in golds.iter().zip(preds).enumerate() {
        if g.len() != p.len() {
            return Err(ForgeError::Evaluation(format!("sequence {i}: {} predicted labels for {} gold labels", p.len(), g.len())));
        }
        match mode {
            NerMode::Token => {
                for (gl, pl) in g.iter().zip(p) {
                    let (gt, pt) = (entity_type(gl), entity_type(pl));
                    if let Some(t) = gt {
                        let c = per.entry(t.to_string()).or_default();
                        if gt == pt { c.tp += 1 } else { c.fn_ += 1 }
                    }
                    if let Some(t) = pt {
                        if gt != pt {
                            per.entry(t.to_string()).or_default().fp += 1;
                        }
                    }
                }
            }
            NerMode::Span => {
                let (gs, ps) = (bio_spans(g), bio_spans(p));
                for s in &gs {
                    let c = per.entry(s.0.clone()).or_default();
                    if ps.contains(s) { c.tp += 1 } else { c.fn_ += 1 }
                }
                for s in ps.difference(&gs) {
                    per.entry(s.0.clone()).or_default().fp += 1;
                }
            }
        }
    }
    let total = per.values().fold(Counts::default(), |a, c| Counts { tp: a.tp + c.tp, fp: a.fp + c.fp, fn_: a.fn_ + c.fn_ });
    let micro = ClassificationReport::from_counts(total.tp, total.fp, total.fn_, None);
    Ok(NerReport {
        mode,
        f1: micro.f1,
        recall: micro.recall,
        precision: micro.precision,
        micro,
        per_label: per.into_iter().map(|(k, c)| (k, ClassificationReport::from_counts(c.tp, c.fp, c.fn_, None))).collect(),
    })
}

/// Both NER views side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerTable {
    pub schema: String,
    pub token: NerReport,
    pub span: NerReport,
}

impl NerTable {
    pub fn new(golds: &[Vec<String>], preds: &[Vec<String>]) -> Result<Self> {
        Ok(Self {
            schema: "table_ner".into(),
            token: ner_prf(golds, preds, NerMode::Token)?,
            span: ner_prf(golds, preds, NerMode::Span)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnReport {
    pub schema: String,
    #[serde(rename = "Accuracy")]
    pub accuracy: f64,
    #[serde(rename = "F1 Score")]
    pub f1: f64,
    #[serde(rename = "Recall")]
    pub recall: f64,
    #[serde(rename = "Precision")]
    pub precision: f64,
    pub counts: ClassificationReport,
}

impl VulnReport {
    pub fn new(counts: ClassificationReport) -> Self {
        Self {
            schema: "table_vuln".into(),
            accuracy: counts.accuracy.unwrap_or(0.0),
            f1: counts.f1,
            recall: counts.recall,
            precision: counts.precision,
            counts,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn consistent(r: &ClassificationReport) -> bool {
        let p = if r.tp + r.fp == 0 { 0.0 } else { r.tp as f64 / (r.tp + r.fp) as f64 };
        let rc = if r.tp + r.fn_ == 0 { 0.0 } else { r.tp as f64 / (r.tp + r.fn_) as f64 };
        let f = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
        let acc_ok = match (r.tn, r.accuracy) {
            (Some(tn), Some(a)) => (a - (r.tp + tn) as f64 / (r.tp + r.fp + r.fn_ + tn) as f64).abs() < 1e-12,
            (None, None) => true,
            _ => false,
        };
        (r.precision - p).abs() < 1e-12 && (r.recall - rc).abs() < 1e-12 && (r.f1 - f).abs() < 1e-12 && acc_ok
    }

    #[test]
    fn binary_hand_example() {
        let golds = [true, true, true, false, true, true, false, false, false, false];
        let preds = [true, true, true, true, false, false, false, false, false, false];
        let r = binary_cls_metrics(&golds, &preds).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_, r.tn), (3, 1, 2, Some(4)));
        assert!((r.accuracy.unwrap() - 0.7).abs() < 1e-12);
        assert!((r.precision - 0.75).abs() < 1e-12);
        assert!((r.recall - 0.6).abs() < 1e-12);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
        let v = serde_json::to_value(VulnReport::new(r)).unwrap();
        for k in ["Accuracy", "F1 Score", "Recall", "Precision"] {
            assert!(v.get(k).is_some());
        }
    }

    #[test]
    fn binary_edge_cases() {
        let r = binary_cls_metrics(&[true, false], &[true, false]).unwrap();
        assert_eq!((r.accuracy.unwrap(), r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
        assert!(binary_cls_metrics(&[], &[]).is_err());
        let none_pos = binary_cls_metrics(&[false, false], &[false, false]).unwrap();
        assert_eq!(none_pos.precision, 0.0);
        assert_eq!(none_pos.flags.len(), 2);
    }

    #[test]
    fn ner_boundary_example() {
        let gold = vec![labels(&["O", "O", "B-Malware", "I-Malware", "I-Malware", "O"])];
        let pred = vec![labels(&["O", "O", "B-Malware", "I-Malware", "O", "O"])];
        let span = ner_prf(&gold, &pred, NerMode::Span).unwrap();
        assert_eq!((span.precision, span.recall), (0.0, 0.0));
        let tok = ner_prf(&gold, &pred, NerMode::Token).unwrap();
        assert_eq!((tok.micro.tp, tok.micro.fn_, tok.micro.fp), (2, 1, 0));
        assert_eq!(tok.precision, 1.0);
        assert!((tok.recall - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ner_identical_and_errors() {
        let g = vec![labels(&["B-System", "I-System", "O", "B-Indicator"])];
        for mode in [NerMode::Token, NerMode::Span] {
            let r = ner_prf(&g, &g, mode).unwrap();
            assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        }
        let short = vec![labels(&["O"])];
        assert!(matches!(ner_prf(&g, &short, NerMode::Token), Err(ForgeError::Evaluation(m)) if m.contains("sequence 0")));
        let t = serde_json::to_value(NerTable::new(&g, &g).unwrap()).unwrap();
        assert_eq!(t["schema"], "table_ner");
        assert!(t["span"].get("F1-score").is_some());
    }

    #[test]
    fn bio_decoding() {
        let s = bio_spans(&labels(&["I-A", "I-A", "B-A", "I-B", "O", "B-B"]));
        let expect: BTreeSet<(String, usize, usize)> =
            [("A".into(), 0, 1), ("A".into(), 2, 2), ("B".into(), 3, 3), ("B".into(), 5, 5)].into();
        assert_eq!(s, expect);
    }

    fn arb_seq() -> impl Strategy<Value = (Vec<String>, Vec<String>)> {
        let lab = prop::sample::select(vec!["O", "B-X", "I-X", "B-Y", "I-Y"]);
        prop::collection::vec((lab.clone(), lab), 1..30)
            .prop_map(|v| v.into_iter().map(|(a, b)| (a.to_string(), b.to_string())).unzip())
    }

    proptest! {
        #[test]
        fn reports_are_internally_consistent((g, p) in arb_seq()) {
            for mode in [NerMode::Token, NerMode::Span] {
                let r = ner_prf(&[g.clone()], &[p.clone()], mode).unwrap();
                prop_assert!(consistent(&r.micro));
                prop_assert!(r.per_label.values().all(consistent));
                prop_assert!([r.precision, r.recall, r.f1].iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn binary_reports_are_consistent(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..50)) {
            let (g, p): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            prop_assert!(consistent(&binary_cls_metrics(&g, &p).unwrap()));
        }

        #[test]
        fn single_type_token_mode_matches_binary(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..50)) {
            let to = |b: bool| if b { "B-X".to_string() } else { "O".to_string() };
            let g: Vec<String> = pairs.iter().map(|x| to(x.0)).collect();
            let p: Vec<String> = pairs.iter().map(|x| to(x.1)).collect();
            let ner = ner_prf(&[g], &[p], NerMode::Token).unwrap();
            let (gb, pb): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            let bin = binary_cls_metrics(&gb, &pb).unwrap();
            prop_assert_eq!((ner.micro.tp, ner.micro.fp, ner.micro.fn_), (bin.tp, bin.fp, bin.fn_));
            prop_assert_eq!((ner.precision, ner.recall, ner.f1), (bin.precision, bin.recall, bin.f1));
        }
    }
}
