use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};

use super::config::EncoderConfig;
use crate::error::{ForgeError, Result};
use crate::seed::{rng_from, Rng};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Encoder weights plus all task heads. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    /// MLM logits reuse `tok_emb` and add this bias.
    pub mlm_bias: Array1<f64>,
    pub cross_w: Array1<f64>,
    pub tok_cls_w: Array2<f64>,
    pub tok_cls_b: Array1<f64>,
    pub seq_cls_w: Array2<f64>,
    pub seq_cls_b: Array1<f64>,
}

pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

fn normal2(rng: &mut Rng, r: usize, c: usize) -> Array2<f64> {
    let n = Normal::new(0.0, INIT_STD).expect("valid std");
    Array2::from_shape_simple_fn((r, c), || n.sample(rng))
}

/// Projection weights: std `1 / sqrt(fan_in)` so attention logits start away
/// from the uniform saddle at small widths.
fn fan_in2(rng: &mut Rng, r: usize, c: usize) -> Array2<f64> {
    let n = Normal::new(0.0, 1.0 / (r as f64).sqrt()).expect("valid std");
    Array2::from_shape_simple_fn((r, c), || n.sample(rng))
}

fn normal1(rng: &mut Rng, len: usize) -> Array1<f64> {
    let n = Normal::new(0.0, INIT_STD).expect("valid std");
    Array1::from_shape_simple_fn(len, || n.sample(rng))
}

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2)
    };
}

impl LayerParams {
    fn init(cfg: &EncoderConfig, rng: &mut Rng) -> Self {
        let (d, f) = (cfg.d_model, cfg.d_ff);
        Self {
            ln1_g: Array1::ones(d),
            ln1_b: Array1::zeros(d),
            wq: fan_in2(rng, d, d),
            bq: Array1::zeros(d),
            wk: fan_in2(rng, d, d),
            bk: Array1::zeros(d),
            wv: fan_in2(rng, d, d),
            bv: Array1::zeros(d),
            wo: fan_in2(rng, d, d),
            bo: Array1::zeros(d),
            ln2_g: Array1::ones(d),
            ln2_b: Array1::zeros(d),
            w1: fan_in2(rng, d, f),
            b1: Array1::zeros(f),
            w2: fan_in2(rng, f, d),
            b2: Array1::zeros(d),
        }
    }

    fn tensors<'a>(&'a self, i: usize, out: &mut Vec<TensorRef<'a>>) {
        macro_rules! push {
            ($($f:ident),*) => {$(
                out.push(TensorRef {
                    name: format!("layers.{i}.{}", stringify!($f)),
                    shape: self.$f.shape().to_vec(),
                    data: self.$f.as_slice().expect("standard layout"),
                });
            )*};
        }
        layer_fields!(push);
    }

    fn tensors_mut<'a>(&'a mut self, i: usize, out: &mut Vec<(String, &'a mut [f64])>) {
        macro_rules! push {
            ($($f:ident),*) => {$(
                out.push((format!("layers.{i}.{}", stringify!($f)), self.$f.as_slice_mut().expect("standard layout")));
            )*};
        }
        layer_fields!(push);
    }
}

macro_rules! top_fields {
    ($m:ident) => {
        $m!(tok_emb, pos_emb);
        $m!(@layers);
        $m!(lnf_g, lnf_b, mlm_bias, cross_w, tok_cls_w, tok_cls_b, seq_cls_w, seq_cls_b);
    };
}

impl EncoderParams {
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from(seed);
        let (v, d, nl) = (config.vocab_size, config.d_model, config.num_labels);
        let tok_emb = normal2(&mut rng, v, d);
        let pos_emb = normal2(&mut rng, config.max_len, d);
        let layers = (0..config.n_layers).map(|_| LayerParams::init(&config, &mut rng)).collect();
        let cross_w = normal1(&mut rng, d);
        let tok_cls_w = normal2(&mut rng, d, nl);
        let seq_cls_w = normal2(&mut rng, d, 2);
        Ok(Self {
            config,
            tok_emb,
            pos_emb,
            layers,
            lnf_g: Array1::ones(d),
            lnf_b: Array1::zeros(d),
            mlm_bias: Array1::zeros(v),
            cross_w,
            tok_cls_w,
            tok_cls_b: Array1::zeros(nl),
            seq_cls_w,
            seq_cls_b: Array1::zeros(2),
        })
    }

    /// Named flat views in a fixed order.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        macro_rules! push {
            (@layers) => {
                for (i, l) in self.layers.iter().enumerate() {
                    l.tensors(i, &mut out);
                }
            };
            ($($f:ident),*) => {$(
                out.push(TensorRef {
                    name: stringify!($f).to_string(),
                    shape: self.$f.shape().to_vec(),
                    data: self.$f.as_slice().expect("standard layout"),
                });
            )*};
        }
        top_fields!(push);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        macro_rules! push {
            (@layers) => {
                for (i, l) in self.layers.iter_mut().enumerate() {
                    l.tensors_mut(i, &mut out);
                }
            };
            ($($f:ident),*) => {$(
                out.push((stringify!($f).to_string(), self.$f.as_slice_mut().expect("standard layout")));
            )*};
        }
        top_fields!(push);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn add_assign(&mut self, other: &EncoderParams) {
        for ((_, a), b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b.data).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.data.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Names the first tensor holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.tensors().iter().find(|t| t.data.iter().any(|x| !x.is_finite())) {
            Some(t) => Err(ForgeError::NonFinite(t.name.clone())),
            None => Ok(()),
        }
    }

    /// Copies every tensor from `src` whose name and shape match, keeping
    /// this model's values elsewhere. Returns the names copied.
    pub fn load_matching(&mut self, src: &EncoderParams) -> Vec<String> {
        let theirs: Vec<(String, Vec<usize>, Vec<f64>)> =
            src.tensors().into_iter().map(|t| (t.name, t.shape, t.data.to_vec())).collect();
        let shapes: Vec<Vec<usize>> = self.tensors().into_iter().map(|t| t.shape).collect();
        let mut copied = Vec::new();
        for ((name, dst), shape) in self.tensors_mut().into_iter().zip(shapes) {
            if let Some((_, _, data)) = theirs.iter().find(|(n, s, _)| *n == name && *s == shape) {
                dst.copy_from_slice(data);
                copied.push(name);
            }
        }
        copied
    }
}
