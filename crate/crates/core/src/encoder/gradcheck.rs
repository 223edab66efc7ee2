use rand::Rng as _;
use serde::Serialize;

use super::params::EncoderParams;
use crate::error::Result;
use crate::seed::rng_from;

#[derive(Debug, Clone, Serialize)]
pub struct Probe {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn perturbed(params: &EncoderParams, tensor: usize, index: usize, delta: f64) -> EncoderParams {
    let mut p = params.clone();
    p.tensors_mut()[tensor].1[index] += delta;
    p
}

/// Compares `analytic` with central differences of `loss` at `probes`
/// coordinates: one per tensor in turn at a random index, plus the
/// coordinate with the largest analytic magnitude.
pub fn check_gradient<L>(
    params: &EncoderParams,
    loss: L,
    analytic: &EncoderParams,
    probes: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    L: Fn(&EncoderParams) -> Result<f64>,
{
    let grads = analytic.tensors();
    let mut rng = rng_from(seed);
    let mut coords: Vec<(usize, usize)> = Vec::with_capacity(probes + 1);
    let (mut bt, mut bi, mut bv) = (0, 0, -1.0);
    for (t, g) in grads.iter().enumerate() {
        for (i, v) in g.data.iter().enumerate() {
            if v.abs() > bv {
                (bt, bi, bv) = (t, i, v.abs());
            }
        }
    }
    coords.push((bt, bi));
    for k in 0..probes {
        let t = k % grads.len();
        coords.push((t, rng.random_range(0..grads[t].data.len())));
    }
    let mut out = Vec::with_capacity(coords.len());
    for (t, i) in coords {
        let plus = loss(&perturbed(params, t, i, eps))?;
        let minus = loss(&perturbed(params, t, i, -eps))?;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = grads[t].data[i];
        out.push(Probe { tensor: grads[t].name.clone(), index: i, analytic: a, numeric, rel_err: relative_error(a, numeric) });
    }
    let max_rel_err = out.iter().map(|p| p.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_err, probes: out })
}

/// Gradient check of a loss that returns its own analytic gradient.
pub fn finite_diff_check<F>(params: &EncoderParams, loss: F, probes: usize, eps: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&EncoderParams) -> Result<(f64, EncoderParams)>,
{
    let (_, analytic) = loss(params)?;
    check_gradient(params, |p| loss(p).map(|r| r.0), &analytic, probes, eps, seed)
}
