//! Pre-LayerNorm transformer encoder with learned positions and an explicit
//! backward pass.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;

use super::params::{EncoderParams, LayerParams};
use crate::error::{ForgeError, Result};
use crate::ingest::PAD;
use crate::seed::rng_from;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) struct LayerCache {
    xhat1: Array2<f64>,
    rstd1: Array1<f64>,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    drop1: Option<Array2<f64>>,
    xhat2: Array2<f64>,
    rstd2: Array1<f64>,
    b: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
    drop2: Option<Array2<f64>>,
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache {
    pub ids: Vec<u32>,
    /// `true` at positions that may be attended to (non-PAD).
    pub key_mask: Vec<bool>,
    layers: Vec<LayerCache>,
    xhatf: Array2<f64>,
    rstdf: Array1<f64>,
    /// Final hidden states, `len x d`.
    pub hidden: Array2<f64>,
}

impl ForwardCache {
    /// Attention weights of one head in one layer, `len x len`.
    pub fn attention(&self, layer: usize, head: usize) -> &Array2<f64> {
        &self.layers[layer].probs[head]
    }
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let n = x.nrows();
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(n);
    for (i, mut row) in xhat.rows_mut().into_iter().enumerate() {
        let mu = row.mean().unwrap_or(0.0);
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / row.len() as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mu) * r);
        rstd[i] = r;
    }
    let y = &xhat * g + b;
    (y, xhat, rstd)
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    xhat: &Array2<f64>,
    rstd: &Array1<f64>,
    g: &Array1<f64>,
    dg: &mut Array1<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    *dg += &(dy * xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let dxhat = dy * g;
    let d = xhat.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = xhat.row(i);
        let mean_dh = dh.sum() / d;
        let mean_dhx = dh.dot(&xh) / d;
        let mut out = dx.row_mut(i);
        for j in 0..out.len() {
            out[j] = rstd[i] * (dh[j] - mean_dh - xh[j] * mean_dhx);
        }
    }
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

fn linear(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

/// `dw += x^T dy`, `db += colsum(dy)`, returns `dy w^T`.
fn linear_backward(
    x: ArrayView2<f64>,
    w: &Array2<f64>,
    dy: &Array2<f64>,
    dw: &mut Array2<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    general_mat_mul(1.0, &x.t(), dy, 1.0, dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

fn dropout_mask(shape: (usize, usize), p: f64, rng: &mut crate::seed::Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { 0.0 } else { keep })
}

impl EncoderParams {
    /// Runs the encoder on one sequence. `dropout_seed` enables dropout on
    /// the residual branches when the configured rate is positive.
    pub fn forward(&self, ids: &[u32], dropout_seed: Option<u64>) -> Result<ForwardCache> {
        let cfg = &self.config;
        let n = ids.len();
        if n == 0 || n > cfg.max_len {
            return Err(ForgeError::Shape(format!("sequence length {n} outside 1..={}", cfg.max_len)));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
            return Err(ForgeError::Shape(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
        }
        let key_mask: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
        if !key_mask.iter().any(|&m| m) {
            return Err(ForgeError::Input("sequence contains only padding".into()));
        }
        let mut drop_rng = dropout_seed.filter(|_| cfg.dropout > 0.0).map(rng_from);
        let d = cfg.d_model;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let mut x = Array2::zeros((n, d));
        for (i, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(i);
            row += &self.tok_emb.row(id as usize);
            row += &self.pos_emb.row(i);
        }

        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (a, xhat1, rstd1) = layer_norm(&x, &layer.ln1_g, &layer.ln1_b);
            let q = linear(&a, &layer.wq, &layer.bq);
            let k = linear(&a, &layer.wk, &layer.bk);
            let v = linear(&a, &layer.wv, &layer.bv);
            let mut ctx = Array2::zeros((n, d));
            let mut probs = Vec::with_capacity(cfg.n_heads);
            for h in 0..cfg.n_heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = q.slice(s![.., cols.clone()]);
                let kh = k.slice(s![.., cols.clone()]);
                let vh = v.slice(s![.., cols.clone()]);
                let mut p = qh.dot(&kh.t());
                for mut row in p.rows_mut() {
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in row.iter_mut().enumerate() {
                        *s *= scale;
                        if key_mask[j] && *s > max {
                            max = *s;
                        }
                    }
                    let mut z = 0.0;
                    for (j, s) in row.iter_mut().enumerate() {
                        *s = if key_mask[j] { (*s - max).exp() } else { 0.0 };
                        z += *s;
                    }
                    row.mapv_inplace(|s| s / z);
                }
                ctx.slice_mut(s![.., cols]).assign(&p.dot(&vh));
                probs.push(p);
            }
            let mut attn_out = linear(&ctx, &layer.wo, &layer.bo);
            let drop1 = drop_rng.as_mut().map(|r| dropout_mask((n, d), cfg.dropout, r));
            if let Some(m) = &drop1 {
                attn_out *= m;
            }
            x += &attn_out;

            let (b, xhat2, rstd2) = layer_norm(&x, &layer.ln2_g, &layer.ln2_b);
            let u = linear(&b, &layer.w1, &layer.b1);
            let g = u.mapv(gelu);
            let mut ffn_out = linear(&g, &layer.w2, &layer.b2);
            let drop2 = drop_rng.as_mut().map(|r| dropout_mask((n, d), cfg.dropout, r));
            if let Some(m) = &drop2 {
                ffn_out *= m;
            }
            x += &ffn_out;
            caches.push(LayerCache { xhat1, rstd1, a, q, k, v, probs, ctx, drop1, xhat2, rstd2, b, u, g, drop2 });
        }
        let (hidden, xhatf, rstdf) = layer_norm(&x, &self.lnf_g, &self.lnf_b);
        Ok(ForwardCache { ids: ids.to_vec(), key_mask, layers: caches, xhatf, rstdf, hidden })
    }

    /// Hidden states without keeping anything for backward.
    pub fn encode(&self, ids: &[u32]) -> Result<Array2<f64>> {
        Ok(self.forward(ids, None)?.hidden)
    }

    /// Accumulates into `grads` the gradient of a loss whose derivative with
    /// respect to the final hidden states is `dh`.
    pub fn backward(&self, cache: &ForwardCache, dh: &Array2<f64>, grads: &mut EncoderParams) {
        let cfg = &self.config;
        let hd = cfg.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut dx = layer_norm_backward(dh, &cache.xhatf, &cache.rstdf, &self.lnf_g, &mut grads.lnf_g, &mut grads.lnf_b);

        for (li, (layer, c)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let gl: &mut LayerParams = &mut grads.layers[li];

            let mut dbranch = dx.clone();
            if let Some(m) = &c.drop2 {
                dbranch *= m;
            }
            let dg = linear_backward(c.g.view(), &layer.w2, &dbranch, &mut gl.w2, &mut gl.b2);
            let du = &dg * &c.u.mapv(gelu_grad);
            let db = linear_backward(c.b.view(), &layer.w1, &du, &mut gl.w1, &mut gl.b1);
            dx += &layer_norm_backward(&db, &c.xhat2, &c.rstd2, &layer.ln2_g, &mut gl.ln2_g, &mut gl.ln2_b);

            let mut dbranch = dx.clone();
            if let Some(m) = &c.drop1 {
                dbranch *= m;
            }
            let dctx = linear_backward(c.ctx.view(), &layer.wo, &dbranch, &mut gl.wo, &mut gl.bo);
            let n = dctx.nrows();
            let mut dq = Array2::zeros((n, cfg.d_model));
            let mut dk = Array2::zeros((n, cfg.d_model));
            let mut dv = Array2::zeros((n, cfg.d_model));
            for (h, p) in c.probs.iter().enumerate() {
                let cols = h * hd..(h + 1) * hd;
                let dctx_h = dctx.slice(s![.., cols.clone()]);
                let dp = dctx_h.dot(&c.v.slice(s![.., cols.clone()]).t());
                dv.slice_mut(s![.., cols.clone()]).assign(&p.t().dot(&dctx_h));
                let rowdot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
                let ds = p * &(dp - &rowdot) * scale;
                dq.slice_mut(s![.., cols.clone()]).assign(&ds.dot(&c.k.slice(s![.., cols.clone()])));
                dk.slice_mut(s![.., cols.clone()]).assign(&ds.t().dot(&c.q.slice(s![.., cols])));
            }
            let mut da = linear_backward(c.a.view(), &layer.wq, &dq, &mut gl.wq, &mut gl.bq);
            da += &linear_backward(c.a.view(), &layer.wk, &dk, &mut gl.wk, &mut gl.bk);
            da += &linear_backward(c.a.view(), &layer.wv, &dv, &mut gl.wv, &mut gl.bv);
            dx += &layer_norm_backward(&da, &c.xhat1, &c.rstd1, &layer.ln1_g, &mut gl.ln1_g, &mut gl.ln1_b);
        }

        for (i, &id) in cache.ids.iter().enumerate() {
            let mut te = grads.tok_emb.row_mut(id as usize);
            te += &dx.row(i);
            let mut pe = grads.pos_emb.row_mut(i);
            pe += &dx.row(i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::config::EncoderConfig;
    use crate::seed::rng_from;
    use proptest::prelude::*;

    fn params() -> EncoderParams {
        let cfg = EncoderConfig { vocab_size: 30, d_model: 16, n_heads: 2, n_layers: 2, d_ff: 32, max_len: 24, ..Default::default() };
        EncoderParams::init(cfg, 7).unwrap()
    }

    #[test]
    fn shapes_and_errors() {
        let p = params();
        assert_eq!(p.encode(&[1, 5, 6, 2]).unwrap().dim(), (4, 16));
        assert!(matches!(p.encode(&[]), Err(ForgeError::Shape(_))));
        assert!(matches!(p.encode(&vec![5; 25]), Err(ForgeError::Shape(_))));
        assert!(matches!(p.encode(&[99]), Err(ForgeError::Shape(_))));
        assert!(matches!(p.encode(&[PAD, PAD]), Err(ForgeError::Input(_))));
    }

    #[test]
    fn pad_tail_is_invisible() {
        let p = params();
        let short = p.encode(&[1, 7, 8, 9, 2, PAD, PAD]).unwrap();
        let long = p.encode(&[1, 7, 8, 9, 2, PAD, PAD, PAD, PAD, PAD]).unwrap();
        for i in 0..5 {
            for j in 0..16 {
                assert!((short[[i, j]] - long[[i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_changes_training_pass_only() {
        let mut p = params();
        p.config.dropout = 0.3;
        let ids = [1, 7, 8, 9, 2];
        let a = p.forward(&ids, Some(1)).unwrap().hidden;
        let b = p.forward(&ids, Some(2)).unwrap().hidden;
        assert_ne!(a, b);
        assert_eq!(p.encode(&ids).unwrap(), p.encode(&ids).unwrap());
    }

    proptest! {
        #[test]
        fn attention_rows_normalize(ids in prop::collection::vec(0u32..30, 1..24), sd in 0u64..100) {
            prop_assume!(ids.iter().any(|&i| i != PAD));
            let mut rng = rng_from(sd);
            let cfg = EncoderConfig { vocab_size: 30, d_model: 16, n_heads: 2, n_layers: 2, d_ff: 32, max_len: 24, ..Default::default() };
            let p = EncoderParams::init(cfg, rng.random()).unwrap();
            let c = p.forward(&ids, None).unwrap();
            for l in 0..2 {
                for h in 0..2 {
                    let a = c.attention(l, h);
                    for (i, row) in a.rows().into_iter().enumerate() {
                        prop_assert!((row.sum() - 1.0).abs() < 1e-6, "row {i}");
                        for (j, &w) in row.iter().enumerate() {
                            if ids[j] == PAD { prop_assert_eq!(w, 0.0); }
                        }
                    }
                }
            }
        }
    }
}
