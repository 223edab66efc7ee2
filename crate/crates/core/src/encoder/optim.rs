use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::params::EncoderParams;
use crate::error::{ForgeError, Result};

/// Linear warmup from 0 to `base`, then linear decay to 0 at `total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LrSchedule {
    pub fn new(base: f64, warmup: usize, total: usize) -> Result<Self> {
        if !(base > 0.0) || warmup > total {
            return Err(ForgeError::Config(format!("invalid schedule: base {base}, warmup {warmup}, total {total}")));
        }
        Ok(Self { base, warmup, total })
    }

    pub fn from_config(cfg: &TrainConfig, total: usize) -> Result<Self> {
        Self::new(cfg.learning_rate, (cfg.warmup_ratio * total as f64).round() as usize, total)
    }
}

/// Learning rate at `step`; the flag is set when `step` is past the end
/// and the rate was clamped to 0.
pub fn lr_at(step: usize, s: &LrSchedule) -> (f64, bool) {
    if step > s.total {
        return (0.0, true);
    }
    let lr = if step < s.warmup {
        s.base * (step as f64 / s.warmup as f64)
    } else if s.total == s.warmup {
        s.base
    } else {
        s.base * ((s.total - step) as f64 / (s.total - s.warmup) as f64)
    };
    (lr, false)
}

/// Scales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut EncoderParams, max_norm: f64) -> Result<f64> {
    grads.check_finite().map_err(|e| match e {
        ForgeError::NonFinite(name) => ForgeError::Training(format!("non-finite gradient in `{name}`")),
        other => other,
    })?;
    let norm = grads.l2_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    Ok(norm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: EncoderParams,
    pub v: EncoderParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &EncoderParams) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }
}

/// One AdamW update with bias-corrected moments and decoupled weight decay.
pub fn adamw_step(params: &mut EncoderParams, grads: &EncoderParams, state: &mut AdamState, lr: f64, cfg: &TrainConfig) -> Result<()> {
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let wd = cfg.weight_decay;
    let views = params.tensors_mut().into_iter().zip(grads.tensors()).zip(state.m.tensors_mut()).zip(state.v.tensors_mut());
    for ((((name, p), g), (_, m)), (_, v)) in views {
        for i in 0..p.len() {
            let gi = g.data[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let update = (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps) + wd * p[i];
            p[i] -= lr * update;
            if !p[i].is_finite() {
                return Err(ForgeError::Training(format!("non-finite update in `{name}`")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::config::EncoderConfig;

    fn tiny() -> EncoderParams {
        let cfg = EncoderConfig { vocab_size: 8, d_model: 4, n_heads: 1, n_layers: 1, d_ff: 4, max_len: 6, ..Default::default() };
        EncoderParams::init(cfg, 3).unwrap()
    }

    #[test]
    fn schedule_points() {
        let s = LrSchedule::new(5e-5, 10, 100).unwrap();
        assert_eq!(lr_at(0, &s), (0.0, false));
        assert_eq!(lr_at(10, &s).0, 5e-5);
        assert!((lr_at(55, &s).0 - 2.5e-5).abs() < 1e-18);
        assert_eq!(lr_at(100, &s).0, 0.0);
        assert_eq!(lr_at(101, &s), (0.0, true));
        assert!(LrSchedule::new(1.0, 20, 10).is_err());
        let flat = LrSchedule::new(1.0, 5, 5).unwrap();
        assert_eq!(lr_at(5, &flat).0, 1.0);
    }

    #[test]
    fn schedule_is_continuous_and_peaks_at_base() {
        let s = LrSchedule::new(1.0, 7, 50).unwrap();
        let lrs: Vec<f64> = (0..=50).map(|t| lr_at(t, &s).0).collect();
        assert!(lrs.windows(2).all(|w| (w[0] - w[1]).abs() <= 1.0 / 7.0 + 1e-12));
        assert_eq!(lrs.iter().cloned().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn clipping() {
        let mut g = tiny().zeros_like();
        g.cross_w[0] = 2.0;
        assert_eq!(clip_grad_norm(&mut g, 1.0).unwrap(), 2.0);
        assert_eq!(g.cross_w[0], 1.0);
        let mut small = tiny().zeros_like();
        small.cross_w[0] = 0.3;
        small.cross_w[1] = 0.4;
        let before = small.clone();
        clip_grad_norm(&mut small, 1.0).unwrap();
        assert_eq!(small, before);
        let mut big = tiny();
        big.scale(100.0);
        let orig = big.clone();
        clip_grad_norm(&mut big, 1.0).unwrap();
        assert!(big.l2_norm() <= 1.0 + 1e-9);
        for (a, b) in big.tensors().iter().zip(orig.tensors()) {
            assert!(a.data.iter().zip(b.data).all(|(x, y)| x.abs() <= y.abs()));
        }
        let mut bad = tiny().zeros_like();
        bad.layers[0].wq[[0, 0]] = f64::INFINITY;
        assert!(matches!(clip_grad_norm(&mut bad, 1.0), Err(ForgeError::Training(m)) if m.contains("layers.0.wq")));
    }

    #[test]
    fn adamw_closed_forms() {
        let cfg = TrainConfig { weight_decay: 0.0, ..Default::default() };
        let mut p = tiny();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let zero = p.zeros_like();
        adamw_step(&mut p, &zero, &mut st, 0.1, &cfg).unwrap();
        assert_eq!(p, before);

        let mut p = tiny().zeros_like();
        let mut g = p.zeros_like();
        g.cross_w[0] = 1.0;
        let mut st = AdamState::new(&p);
        adamw_step(&mut p, &g, &mut st, 0.1, &cfg).unwrap();
        assert!((p.cross_w[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);

        let cfg = TrainConfig { weight_decay: 0.5, ..Default::default() };
        let mut p = tiny();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let zero = p.zeros_like();
        adamw_step(&mut p, &zero, &mut st, 0.1, &cfg).unwrap();
        assert!((p.tok_emb[[2, 1]] - before.tok_emb[[2, 1]] * (1.0 - 0.05)).abs() < 1e-15);
    }
}
