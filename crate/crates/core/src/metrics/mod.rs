//! Evaluation metrics and the JSON reports built from them.

mod classification;
mod ranking;
mod topn;

pub use classification::{
    binary_cls_metrics, ner_prf, ClassificationReport, NerMode, NerReport, NerTable, VulnReport, BIO_OUTSIDE,
};
pub use ranking::{
    average_precision, evaluate_rankings, mean_average_precision, mrr_at_k, ndcg_at_k, recall_at_1, Qrels, Rankings,
    RetrievalReport,
};
pub use topn::{topn_accuracy, TopNReport, TopNRow, TOPN_LEVELS};

/// Divides, returning 0 and a flag when the denominator is 0.
pub(crate) fn ratio(num: f64, den: f64, what: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        flags.push(format!("{what} undefined (zero denominator), reported as 0"));
        0.0
    } else {
        num / den
    }
}
