//! Three-phase source curriculum with perplexity-driven annealing.
//!
//! Sampling probabilities blend a quality prior with the balanced
//! size-proportional distribution. The blend ramps toward diversity across the
//! mid phase, then back toward the quality prior late in training. During the
//! mid phase only, categories the model predicts poorly on held-out data get
//! a bounded boost.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Category, QualityTier};
use crate::error::{ForgeError, Result};
use crate::filter::BalancePlan;
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Early,
    Mid,
    Late,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseSchedule {
    pub e1: f64,
    pub e2: f64,
    pub lambda_late: f64,
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        Self { e1: 0.3, e2: 0.8, lambda_late: 0.3 }
    }
}

impl PhaseSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.e1 && self.e1 < self.e2 && self.e2 < 1.0) {
            return Err(ForgeError::Config(format!(
                "phase boundaries must satisfy 0 < e1 < e2 < 1, got e1={} e2={}",
                self.e1, self.e2
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda_late) {
            return Err(ForgeError::Config(format!("lambda_late must lie in [0, 1], got {}", self.lambda_late)));
        }
        Ok(())
    }
}

fn check_progress(progress: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(ForgeError::Domain(format!("training progress {progress} is outside [0, 1]")));
    }
    Ok(())
}

/// Boundaries belong to the later phase.
pub fn phase_of(progress: f64, schedule: &PhaseSchedule) -> Result<Phase> {
    check_progress(progress)?;
    Ok(if progress < schedule.e1 {
        Phase::Early
    } else if progress < schedule.e2 {
        Phase::Mid
    } else {
        Phase::Late
    })
}

/// Weight of the diverse distribution: 0 early, ramps to 1 across mid, then
/// back down to `lambda_late` at the end of training.
pub fn blend_factor(progress: f64, schedule: &PhaseSchedule) -> Result<f64> {
    Ok(match phase_of(progress, schedule)? {
        Phase::Early => 0.0,
        Phase::Mid => (progress - schedule.e1) / (schedule.e2 - schedule.e1),
        Phase::Late => 1.0 + (schedule.lambda_late - 1.0) * (progress - schedule.e2) / (1.0 - schedule.e2),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    #[serde(flatten)]
    pub schedule: PhaseSchedule,
    pub eta: f64,
    pub clip: f64,
    pub synthetic_tier: QualityTier,
    /// Steps between held-out perplexity refreshes.
    pub refresh_every: usize,
    pub targets: BTreeMap<Category, f64>,
    pub cap: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            schedule: PhaseSchedule::default(),
            eta: 0.5,
            clip: 2.0,
            synthetic_tier: QualityTier::Medium,
            refresh_every: 200,
            targets: BTreeMap::new(),
            cap: 10.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerplexityStats {
    pub step: usize,
    pub perplexity: BTreeMap<Category, f64>,
    /// Categories without any masked held-out position.
    pub excluded: Vec<Category>,
}

impl PerplexityStats {
    pub fn from_nll(step: usize, nll: &BTreeMap<Category, (f64, usize)>) -> Self {
        let mut stats = PerplexityStats { step, ..Default::default() };
        for (c, (sum, count)) in nll {
            if *count == 0 {
                stats.excluded.push(*c);
            } else {
                stats.perplexity.insert(*c, (sum / *count as f64).exp());
            }
        }
        stats
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceWeights {
    pub progress: f64,
    pub weights: BTreeMap<Category, f64>,
}

impl SourceWeights {
    pub fn get(&self, c: Category) -> f64 {
        self.weights.get(&c).copied().unwrap_or(0.0)
    }
}

fn normalized(mut m: BTreeMap<Category, f64>) -> BTreeMap<Category, f64> {
    let z: f64 = m.values().sum();
    m.values_mut().for_each(|v| *v /= z);
    m
}

/// Quality prior: mass proportional to tier score over the plan's categories.
pub fn quality_prior(plan: &BalancePlan, synthetic_tier: QualityTier) -> BTreeMap<Category, f64> {
    normalized(plan.categories().map(|c| (c, c.tier(synthetic_tier).score())).collect())
}

/// Per-category multiplier from held-out perplexity: `exp(eta * clamp(d_c))`
/// where `d_c` is the category's log-perplexity minus the mean
/// log-perplexity. Categories without stats get multiplier 1.
pub fn feedback_multipliers(
    categories: impl Iterator<Item = Category>,
    ppl: &PerplexityStats,
    eta: f64,
    clip: f64,
) -> BTreeMap<Category, f64> {
    let logs: BTreeMap<Category, f64> = ppl.perplexity.iter().map(|(c, p)| (*c, p.ln())).collect();
    let mean = if logs.is_empty() { 0.0 } else { logs.values().sum::<f64>() / logs.len() as f64 };
    categories
        .map(|c| {
            let dev = logs.get(&c).map_or(0.0, |l| (l - mean).clamp(-clip, clip));
            (c, (eta * dev).exp())
        })
        .collect()
}

pub fn source_weights(
    progress: f64,
    cfg: &CurriculumConfig,
    plan: &BalancePlan,
    ppl: Option<&PerplexityStats>,
) -> Result<SourceWeights> {
    cfg.schedule.validate()?;
    let lambda = blend_factor(progress, &cfg.schedule)?;
    if plan.entries.is_empty() {
        return Err(ForgeError::Config("balance plan covers no categories".into()));
    }
    if let Some(stats) = ppl {
        if let Some(c) = stats.perplexity.keys().find(|c| !plan.entries.contains_key(c)) {
            return Err(ForgeError::Config(format!("category `{c}` has perplexity stats but no balance entry")));
        }
        if let Some((c, p)) = stats.perplexity.iter().find(|(_, p)| !(p.is_finite() && **p > 0.0)) {
            return Err(ForgeError::Domain(format!("perplexity for `{c}` must be finite and positive, got {p}")));
        }
    }
    let prior = quality_prior(plan, cfg.synthetic_tier);
    let balanced = plan.sampled_shares();
    let mut base: BTreeMap<Category, f64> =
        prior.iter().map(|(c, q)| (*c, (1.0 - lambda) * q + lambda * balanced[c])).collect();
    if let (Some(stats), Phase::Mid) = (ppl, phase_of(progress, &cfg.schedule)?) {
        let mult = feedback_multipliers(base.keys().copied(), stats, cfg.eta, cfg.clip);
        base.iter_mut().for_each(|(c, w)| *w *= mult[c]);
    }
    Ok(SourceWeights { progress, weights: normalized(base) })
}

/// A drawn batch entry: category and index into that category's pool.
pub type BatchPick = (Category, usize);

/// Draws categories i.i.d. from `weights`, then documents uniformly without
/// replacement within the batch (a pool is reshuffled only if the batch
/// exhausts it).
pub fn sample_batch<T>(
    weights: &SourceWeights,
    pools: &BTreeMap<Category, Vec<T>>,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<BatchPick>> {
    if batch_size == 0 {
        return Err(ForgeError::Sampling("batch size must be at least 1".into()));
    }
    let cats: Vec<(Category, f64)> = weights.weights.iter().filter(|(_, w)| **w > 0.0).map(|(c, w)| (*c, *w)).collect();
    if cats.is_empty() {
        return Err(ForgeError::Sampling("no category has positive weight".into()));
    }
    for (c, _) in &cats {
        if pools.get(c).is_none_or(Vec::is_empty) {
            return Err(ForgeError::Sampling(format!("category `{c}` has positive weight but an empty pool")));
        }
    }
    let total: f64 = cats.iter().map(|(_, w)| w).sum();
    let mut used: BTreeMap<Category, Vec<usize>> = BTreeMap::new();
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = cats[cats.len() - 1].0;
        for (c, w) in &cats {
            acc += w;
            if u < acc {
                chosen = *c;
                break;
            }
        }
        let pool_len = pools[&chosen].len();
        let taken = used.entry(chosen).or_default();
        if taken.len() == pool_len {
            taken.clear();
        }
        let remaining: Vec<usize> = (0..pool_len).filter(|i| !taken.contains(i)).collect();
        let pick = remaining[rng.random_range(0..remaining.len())];
        taken.push(pick);
        out.push((chosen, pick));
    }
    Ok(out)
}

/// One line of the curriculum trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumTrace {
    pub step: usize,
    pub progress: f64,
    pub phase: Phase,
    pub weights: BTreeMap<Category, f64>,
    pub ppl: Option<BTreeMap<Category, f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::BalanceEntry;
    use crate::seed::rng_from;
    use proptest::prelude::*;

    fn plan(entries: &[(Category, f64, f64)]) -> BalancePlan {
        // (category, share, weight)
        BalancePlan {
            cap: 10.0,
            entries: entries.iter().map(|(c, s, w)| (*c, BalanceEntry { share: *s, target: *s, weight: *w })).collect(),
        }
    }

    #[test]
    fn phases_and_boundaries() {
        let s = PhaseSchedule::default();
        assert_eq!(phase_of(0.0, &s).unwrap(), Phase::Early);
        assert_eq!(phase_of(s.e1, &s).unwrap(), Phase::Mid);
        assert_eq!(phase_of(s.e2, &s).unwrap(), Phase::Late);
        assert_eq!(phase_of(1.0, &s).unwrap(), Phase::Late);
        assert!(matches!(phase_of(1.01, &s), Err(ForgeError::Domain(_))));
        assert!(matches!(phase_of(-0.1, &s), Err(ForgeError::Domain(_))));
    }

    #[test]
    fn blend_examples_and_continuity() {
        let s = PhaseSchedule::default();
        assert_eq!(blend_factor(0.0, &s).unwrap(), 0.0);
        assert!((blend_factor((s.e1 + s.e2) / 2.0, &s).unwrap() - 0.5).abs() < 1e-12);
        assert!((blend_factor(1.0, &s).unwrap() - 0.3).abs() < 1e-12);
        for b in [s.e1, s.e2] {
            let left = blend_factor(b - 1e-13, &s).unwrap();
            let at = blend_factor(b, &s).unwrap();
            assert!((left - at).abs() < 1e-12, "jump at {b}: {left} vs {at}");
        }
    }

    #[test]
    fn two_category_blend() {
        // High and low tier give Q = (0.75, 0.25); equal shares give U = (0.5, 0.5).
        let p = plan(&[(Category::Seed, 0.5, 1.0), (Category::Web, 0.5, 1.0)]);
        let cfg = CurriculumConfig::default();
        let mid = (cfg.schedule.e1 + cfg.schedule.e2) / 2.0;
        let w = source_weights(mid, &cfg, &p, None).unwrap();
        assert!((w.get(Category::Seed) - 0.625).abs() < 1e-12);
        assert!((w.get(Category::Web) - 0.375).abs() < 1e-12);
    }

    #[test]
    fn progress_zero_is_quality_prior_even_with_feedback() {
        let p = plan(&[(Category::Seed, 0.2, 1.0), (Category::Web, 0.7, 1.0), (Category::Dialogue, 0.1, 1.0)]);
        let cfg = CurriculumConfig::default();
        let ppl = PerplexityStats {
            step: 0,
            perplexity: [(Category::Seed, 3.0), (Category::Web, 90.0), (Category::Dialogue, 7.0)].into(),
            excluded: vec![],
        };
        let w = source_weights(0.0, &cfg, &p, Some(&ppl)).unwrap();
        assert_eq!(w.weights, quality_prior(&p, cfg.synthetic_tier));
        assert!((w.get(Category::Seed) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn equal_perplexity_leaves_blend_untouched() {
        let p = plan(&[(Category::Seed, 0.3, 1.0), (Category::Web, 0.7, 1.2)]);
        let cfg = CurriculumConfig::default();
        let ppl =
            PerplexityStats { step: 0, perplexity: [(Category::Seed, 12.0), (Category::Web, 12.0)].into(), excluded: vec![] };
        let with = source_weights(0.5, &cfg, &p, Some(&ppl)).unwrap();
        let without = source_weights(0.5, &cfg, &p, None).unwrap();
        for c in [Category::Seed, Category::Web] {
            assert!((with.get(c) - without.get(c)).abs() < 1e-15);
        }
    }

    #[test]
    fn perplexity_from_nll() {
        // Gold probabilities 0.5, 0.25 and 0.125 on one category.
        let nll: BTreeMap<Category, (f64, usize)> = [
            (Category::Seed, (-(0.5f64.ln()) - 0.25f64.ln() - 0.125f64.ln(), 3)),
            (Category::Web, (0.0, 0)),
        ]
        .into();
        let stats = PerplexityStats::from_nll(5, &nll);
        assert!((stats.perplexity[&Category::Seed] - 4.0).abs() < 1e-12);
        assert_eq!(stats.excluded, vec![Category::Web]);
    }

    #[test]
    fn sampling_examples() {
        let pools: BTreeMap<Category, Vec<u32>> = [(Category::Seed, vec![1, 2, 3]), (Category::Web, vec![4])].into();
        let only_seed = SourceWeights { progress: 0.0, weights: [(Category::Seed, 1.0), (Category::Web, 0.0)].into() };
        let b = sample_batch(&only_seed, &pools, 3, &mut rng_from(1)).unwrap();
        assert!(b.iter().all(|(c, _)| *c == Category::Seed));
        let mut ids: Vec<usize> = b.iter().map(|p| p.1).collect();
        ids.sort();
        assert_eq!(ids, vec![0, 1, 2]);

        let w = SourceWeights { progress: 0.0, weights: [(Category::Seed, 0.7), (Category::Web, 0.3)].into() };
        let a = sample_batch(&w, &pools, 10, &mut rng_from(42)).unwrap();
        assert_eq!(a, sample_batch(&w, &pools, 10, &mut rng_from(42)).unwrap());

        let mut rng = rng_from(7);
        let draws = 10_000;
        let seed_hits =
            (0..draws).filter(|_| sample_batch(&w, &pools, 1, &mut rng).unwrap()[0].0 == Category::Seed).count();
        assert!((seed_hits as f64 / draws as f64 - 0.7).abs() <= 0.02);

        let empty: BTreeMap<Category, Vec<u32>> = [(Category::Seed, vec![])].into();
        let w = SourceWeights { progress: 0.0, weights: [(Category::Seed, 1.0)].into() };
        assert!(matches!(sample_batch(&w, &empty, 1, &mut rng_from(0)), Err(ForgeError::Sampling(_))));
    }

    fn arb_case() -> impl Strategy<Value = (BalancePlan, PerplexityStats, f64)> {
        (2usize..=8, prop::collection::vec((0.01f64..1.0, 0.1f64..10.0, 1.0f64..500.0), 8), 0.0f64..=1.0).prop_map(
            |(n, raw, progress)| {
                let cats = &Category::ALL[..n];
                let z: f64 = raw[..n].iter().map(|r| r.0).sum();
                let p = plan(&cats.iter().zip(&raw).map(|(c, r)| (*c, r.0 / z, r.1)).collect::<Vec<_>>());
                let ppl = PerplexityStats {
                    step: 0,
                    perplexity: cats.iter().zip(&raw).map(|(c, r)| (*c, r.2)).collect(),
                    excluded: vec![],
                };
                (p, ppl, progress)
            },
        )
    }

    proptest! {
        #[test]
        fn weights_form_a_distribution((p, ppl, progress) in arb_case()) {
            let w = source_weights(progress, &CurriculumConfig::default(), &p, Some(&ppl)).unwrap();
            let sum: f64 = w.weights.values().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(w.weights.values().all(|v| *v >= 0.0));
        }

        #[test]
        fn raising_perplexity_never_lowers_weight(
            (p, ppl, progress) in arb_case(),
            pick in 0usize..8,
            factor in 1.0f64..50.0,
        ) {
            let cfg = CurriculumConfig::default();
            let progress = cfg.schedule.e1 + progress * (cfg.schedule.e2 - cfg.schedule.e1) * 0.999;
            let cats: Vec<Category> = ppl.perplexity.keys().copied().collect();
            let c = cats[pick % cats.len()];
            let mut raised = ppl.clone();
            *raised.perplexity.get_mut(&c).unwrap() *= factor;
            let before = source_weights(progress, &cfg, &p, Some(&ppl)).unwrap().get(c);
            let after = source_weights(progress, &cfg, &p, Some(&raised)).unwrap().get(c);
            prop_assert!(after >= before - 1e-15, "{before} -> {after}");
        }

        #[test]
        fn prior_prefers_higher_tiers((p, _ppl, _) in arb_case()) {
            let w = source_weights(0.0, &CurriculumConfig::default(), &p, None).unwrap();
            for (a, wa) in &w.weights {
                for (b, wb) in &w.weights {
                    if a.tier(QualityTier::Medium) > b.tier(QualityTier::Medium) {
                        prop_assert!(wa >= wb);
                    }
                }
            }
        }
    }
}
