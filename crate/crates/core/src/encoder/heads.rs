//! Task heads, their losses and analytic gradients.
//!
//! Batch losses average over the batch's scored units (masked positions,
//! labeled tokens, pairs or sequences). Per-example work runs in fixed-size
//! chunks whose partial gradients are summed in order, so results do not
//! depend on the thread count.

use std::collections::BTreeSet;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use super::model::ForwardCache;
use super::params::EncoderParams;
use crate::error::{ForgeError, Result};
use crate::ingest::{CLS, SEP};
use crate::masking::MaskedExample;
use crate::seed::derive_indexed;

const CHUNK: usize = 4;

/// Per-example dropout seed, or none in evaluation mode.
fn example_seed(seed: Option<u64>, i: usize) -> Option<u64> {
    seed.map(|s| derive_indexed(s, "dropout", i as u64))
}

/// Runs `f` on every item and sums losses and gradients in item order.
fn accumulate<T, F>(params: &EncoderParams, items: &[T], f: F) -> Result<(f64, EncoderParams)>
where
    T: Sync,
    F: Fn(usize, &T, &mut EncoderParams) -> Result<f64> + Sync,
{
    let parts: Vec<Result<(f64, EncoderParams)>> = items
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut g = params.zeros_like();
            let mut loss = 0.0;
            for (j, item) in chunk.iter().enumerate() {
                loss += f(c * CHUNK + j, item, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect();
    let mut total = 0.0;
    let mut grads: Option<EncoderParams> = None;
    for part in parts {
        let (l, g) = part?;
        total += l;
        match grads.as_mut() {
            Some(acc) => acc.add_assign(&g),
            None => grads = Some(g),
        }
    }
    Ok((total, grads.unwrap_or_else(|| params.zeros_like())))
}

/// Softmax probabilities and log-sum-exp of one logit row.
fn softmax(logits: ArrayView1<f64>) -> (Array1<f64>, f64) {
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let exp = logits.mapv(|x| (x - max).exp());
    let z = exp.sum();
    (exp / z, max + z.ln())
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy over rows of `logits` against `golds`. Returns the summed
/// loss and `d(scale * loss)/d logits`.
fn cross_entropy(logits: &Array2<f64>, golds: &[usize], scale: f64) -> (f64, Array2<f64>) {
    let mut loss = 0.0;
    let mut d = Array2::zeros(logits.raw_dim());
    for (i, &g) in golds.iter().enumerate() {
        let (p, lse) = softmax(logits.row(i));
        loss += lse - logits[[i, g]];
        let mut row = d.row_mut(i);
        row.assign(&(p * scale));
        row[g] -= scale;
    }
    (loss, d)
}

// ---------------------------------------------------------------- MLM

fn labeled(ex: &MaskedExample) -> (Vec<usize>, Vec<usize>) {
    ex.masked.iter().map(|&p| (p, ex.labels[p].expect("masked position carries a label") as usize)).unzip()
}

impl EncoderParams {
    /// Vocabulary logits at the given positions (tied embeddings plus bias).
    pub fn mlm_logits(&self, hidden: &Array2<f64>, positions: &[usize]) -> Array2<f64> {
        let hp = hidden.select(Axis(0), positions);
        hp.dot(&self.tok_emb.t()) + &self.mlm_bias
    }

    fn mlm_example(&self, ex: &MaskedExample, seed: Option<u64>, scale: f64, grads: &mut EncoderParams) -> Result<f64> {
        let (pos, gold) = labeled(ex);
        if pos.is_empty() {
            return Ok(0.0);
        }
        let cache = self.forward(&ex.input, seed)?;
        let logits = self.mlm_logits(&cache.hidden, &pos);
        let (loss, dlogits) = cross_entropy(&logits, &gold, scale);
        let hp = cache.hidden.select(Axis(0), &pos);
        general_mat_mul(1.0, &dlogits.t(), &hp, 1.0, &mut grads.tok_emb);
        grads.mlm_bias += &dlogits.sum_axis(Axis(0));
        let dhp = dlogits.dot(&self.tok_emb);
        let mut dh = Array2::zeros(cache.hidden.raw_dim());
        for (r, &p) in pos.iter().enumerate() {
            dh.row_mut(p).assign(&dhp.row(r));
        }
        self.backward(&cache, &dh, grads);
        Ok(loss)
    }

    /// Mean cross-entropy over every masked position in the batch.
    pub fn mlm_loss(&self, batch: &[MaskedExample], seed: Option<u64>) -> Result<(f64, EncoderParams)> {
        let total: usize = batch.iter().map(|e| e.masked.len()).sum();
        if total == 0 {
            return Err(ForgeError::Loss("batch has no masked positions".into()));
        }
        let scale = 1.0 / total as f64;
        let (sum, grads) = accumulate(self, batch, |i, ex, g| self.mlm_example(ex, example_seed(seed, i), scale, g))?;
        Ok((sum * scale, grads))
    }

    /// Log-probability of the gold token at each masked position.
    pub fn gold_log_probs(&self, ex: &MaskedExample) -> Result<Vec<f64>> {
        let (pos, gold) = labeled(ex);
        if pos.is_empty() {
            return Ok(Vec::new());
        }
        let h = self.encode(&ex.input)?;
        let logits = self.mlm_logits(&h, &pos);
        Ok(gold.iter().enumerate().map(|(r, &g)| logits[[r, g]] - softmax(logits.row(r)).1).collect())
    }

    /// Token ids ranked by predicted probability at each masked position,
    /// truncated to `top`. Ties go to the lower id.
    pub fn mlm_rank(&self, ex: &MaskedExample, top: usize) -> Result<Vec<Vec<u32>>> {
        let (pos, _) = labeled(ex);
        if pos.is_empty() {
            return Ok(Vec::new());
        }
        let h = self.encode(&ex.input)?;
        let logits = self.mlm_logits(&h, &pos);
        Ok(logits
            .rows()
            .into_iter()
            .map(|row| {
                let mut ids: Vec<u32> = (0..row.len() as u32).collect();
                ids.sort_by(|&a, &b| row[b as usize].total_cmp(&row[a as usize]).then(a.cmp(&b)));
                ids.truncate(top);
                ids
            })
            .collect())
    }
}

// ---------------------------------------------------------------- bi-encoder

/// Mean over non-PAD positions, then L2 normalization.
fn pool(cache: &ForwardCache) -> Result<(Array1<f64>, f64, f64)> {
    let count = cache.key_mask.iter().filter(|&&m| m).count() as f64;
    let mut mean = Array1::zeros(cache.hidden.ncols());
    for (i, row) in cache.hidden.rows().into_iter().enumerate() {
        if cache.key_mask[i] {
            mean += &row;
        }
    }
    mean /= count;
    let norm = mean.dot(&mean).sqrt();
    if !(norm > 0.0) {
        return Err(ForgeError::Input("pooled representation has zero norm".into()));
    }
    Ok((mean / norm, norm, count))
}

/// Gradient of the hidden states given the gradient of the unit embedding.
fn pool_backward(cache: &ForwardCache, e: &Array1<f64>, norm: f64, count: f64, de: ArrayView1<f64>) -> Array2<f64> {
    let dmean = (&de - &(e * e.dot(&de))) / (norm * count);
    let mut dh = Array2::zeros(cache.hidden.raw_dim());
    for (i, mut row) in dh.rows_mut().into_iter().enumerate() {
        if cache.key_mask[i] {
            row.assign(&dmean);
        }
    }
    dh
}

/// InfoNCE over precomputed similarities; `sims[i][0]` is the positive.
/// Returns the mean loss and its gradient with respect to each similarity.
pub fn info_nce(sims: &[Vec<f64>], tau: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    if !(tau > 0.0) {
        return Err(ForgeError::Config(format!("temperature must be positive, got {tau}")));
    }
    if sims.is_empty() || sims.iter().any(|s| s.len() < 2) {
        return Err(ForgeError::Loss("every query needs a positive and at least one negative".into()));
    }
    let n = sims.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(sims.len());
    for row in sims {
        let logits = Array1::from_iter(row.iter().map(|s| s / tau));
        let (p, lse) = softmax(logits.view());
        loss += lse - logits[0];
        let mut g: Vec<f64> = p.iter().map(|pi| pi / (tau * n)).collect();
        g[0] -= 1.0 / (tau * n);
        grads.push(g);
    }
    Ok((loss / n, grads))
}

/// Contrastive loss over unit embeddings (dot product equals cosine).
/// `candidates[i]` indexes rows of `docs`, positive first.
pub fn contrastive_loss(
    queries: &Array2<f64>,
    docs: &Array2<f64>,
    candidates: &[Vec<usize>],
    tau: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    if candidates.len() != queries.nrows() {
        return Err(ForgeError::Shape(format!("{} candidate lists for {} queries", candidates.len(), queries.nrows())));
    }
    let sims: Vec<Vec<f64>> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| c.iter().map(|&j| queries.row(i).dot(&docs.row(j))).collect())
        .collect();
    let (loss, dsims) = info_nce(&sims, tau)?;
    let mut dq = Array2::zeros(queries.raw_dim());
    let mut dd = Array2::zeros(docs.raw_dim());
    for (i, (c, ds)) in candidates.iter().zip(&dsims).enumerate() {
        for (&j, &g) in c.iter().zip(ds) {
            dq.row_mut(i).scaled_add(g, &docs.row(j));
            dd.row_mut(j).scaled_add(g, &queries.row(i));
        }
    }
    Ok((loss, dq, dd))
}

/// One contrastive batch: token ids of queries and documents, plus each
/// query's candidate documents with its positive first.
#[derive(Debug, Clone, Default)]
pub struct ContrastiveBatch {
    pub queries: Vec<Vec<u32>>,
    pub docs: Vec<Vec<u32>>,
    pub candidates: Vec<Vec<usize>>,
}

impl EncoderParams {
    /// Unit-norm mean-pooled embedding.
    pub fn embed(&self, ids: &[u32]) -> Result<Array1<f64>> {
        let cache = self.forward(ids, None)?;
        Ok(pool(&cache)?.0)
    }

    /// Embeds every sequence into the rows of one matrix.
    pub fn embed_all(&self, seqs: &[Vec<u32>]) -> Result<Array2<f64>> {
        let rows: Vec<Result<Array1<f64>>> = seqs.par_iter().map(|s| self.embed(s)).collect();
        let mut m = Array2::zeros((seqs.len(), self.config.d_model));
        for (i, r) in rows.into_iter().enumerate() {
            m.row_mut(i).assign(&r?);
        }
        Ok(m)
    }

    pub fn bi_encoder_loss(&self, batch: &ContrastiveBatch, tau: f64, seed: Option<u64>) -> Result<(f64, EncoderParams)> {
        let seqs: Vec<&Vec<u32>> = batch.queries.iter().chain(&batch.docs).collect();
        let fwd: Vec<Result<(ForwardCache, (Array1<f64>, f64, f64))>> = seqs
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let c = self.forward(s, example_seed(seed, i))?;
                let p = pool(&c)?;
                Ok((c, p))
            })
            .collect();
        let fwd: Vec<(ForwardCache, (Array1<f64>, f64, f64))> = fwd.into_iter().collect::<Result<_>>()?;
        let nq = batch.queries.len();
        let d = self.config.d_model;
        let mut q = Array2::zeros((nq, d));
        let mut docs = Array2::zeros((batch.docs.len(), d));
        for (i, (_, (e, _, _))) in fwd.iter().enumerate() {
            if i < nq {
                q.row_mut(i).assign(e);
            } else {
                docs.row_mut(i - nq).assign(e);
            }
        }
        let (loss, dq, dd) = contrastive_loss(&q, &docs, &batch.candidates, tau)?;
        let (_, grads) = accumulate(self, &fwd, |i, (cache, (e, norm, count)), g| {
            let de = if i < nq { dq.row(i) } else { dd.row(i - nq) };
            let dh = pool_backward(cache, e, *norm, *count, de);
            self.backward(cache, &dh, g);
            Ok(0.0)
        })?;
        Ok((loss, grads))
    }
}

/// Top-`k` most similar corpus rows per query, skipping excluded ids.
/// Ties go to the smaller id. Shortfalls are reported in the flags.
pub fn mine_hard_negatives(
    queries: &Array2<f64>,
    corpus: &Array2<f64>,
    corpus_ids: &[String],
    k: usize,
    exclude: &[BTreeSet<String>],
) -> (Vec<Vec<usize>>, Vec<String>) {
    let sims = queries.dot(&corpus.t());
    let mut flags = Vec::new();
    let out = (0..queries.nrows())
        .map(|i| {
            let mut order: Vec<usize> = (0..corpus_ids.len()).filter(|&j| !exclude[i].contains(&corpus_ids[j])).collect();
            order.sort_by(|&a, &b| sims[[i, b]].total_cmp(&sims[[i, a]]).then_with(|| corpus_ids[a].cmp(&corpus_ids[b])));
            if order.len() < k {
                flags.push(format!("query {i}: only {} negatives available, wanted {k}", order.len()));
            }
            order.truncate(k);
            order
        })
        .collect();
    (out, flags)
}

// ---------------------------------------------------------------- cross-encoder

/// `CLS query SEP document SEP`, trimming the document before the query.
pub fn pair_input(query: &[u32], doc: &[u32], max_len: usize) -> Result<Vec<u32>> {
    if query.is_empty() {
        return Err(ForgeError::Input("empty query".into()));
    }
    if max_len < 4 {
        return Err(ForgeError::Config(format!("max_len {max_len} cannot hold a pair")));
    }
    let room = max_len - 3;
    // The document gives way first but keeps one token when it has any.
    let q_len = query.len().min(room - usize::from(!doc.is_empty()));
    let d_len = doc.len().min(room - q_len);
    let mut ids = Vec::with_capacity(q_len + d_len + 3);
    ids.push(CLS);
    ids.extend_from_slice(&query[..q_len]);
    ids.push(SEP);
    ids.extend_from_slice(&doc[..d_len]);
    ids.push(SEP);
    Ok(ids)
}

impl EncoderParams {
    pub fn cross_logit(&self, ids: &[u32]) -> Result<f64> {
        let h = self.encode(ids)?;
        Ok(self.cross_w.dot(&h.row(0)))
    }

    /// Relevance probability of an encoded pair.
    pub fn cross_score(&self, ids: &[u32]) -> Result<f64> {
        Ok(sigmoid(self.cross_logit(ids)?))
    }

    /// Mean binary cross-entropy of pair scores against 0/1 labels.
    pub fn pair_bce_loss(&self, pairs: &[(Vec<u32>, f64)], seed: Option<u64>) -> Result<(f64, EncoderParams)> {
        if pairs.is_empty() {
            return Err(ForgeError::Loss("no pairs to score".into()));
        }
        if let Some((_, y)) = pairs.iter().find(|(_, y)| *y != 0.0 && *y != 1.0) {
            return Err(ForgeError::Loss(format!("pair label must be 0 or 1, got {y}")));
        }
        let scale = 1.0 / pairs.len() as f64;
        let (sum, grads) = accumulate(self, pairs, |i, (ids, y), g| {
            let cache = self.forward(ids, example_seed(seed, i))?;
            let h0 = cache.hidden.row(0);
            let z = self.cross_w.dot(&h0);
            let dz = (sigmoid(z) - y) * scale;
            g.cross_w.scaled_add(dz, &h0);
            let mut dh = Array2::zeros(cache.hidden.raw_dim());
            dh.row_mut(0).assign(&(&self.cross_w * dz));
            self.backward(&cache, &dh, g);
            Ok(softplus(z) - y * z)
        })?;
        Ok((sum * scale, grads))
    }
}

// ---------------------------------------------------------------- classification heads

impl EncoderParams {
    pub fn token_logits(&self, hidden: &Array2<f64>) -> Array2<f64> {
        hidden.dot(&self.tok_cls_w) + &self.tok_cls_b
    }

    /// Mean cross-entropy over labeled positions; `None` marks ignored ones.
    pub fn token_cls_loss(&self, batch: &[(Vec<u32>, Vec<Option<usize>>)], seed: Option<u64>) -> Result<(f64, EncoderParams)> {
        for (i, (ids, gold)) in batch.iter().enumerate() {
            if ids.len() != gold.len() {
                return Err(ForgeError::Shape(format!("example {i}: {} labels for {} tokens", gold.len(), ids.len())));
            }
            if let Some(bad) = gold.iter().flatten().find(|&&l| l >= self.config.num_labels) {
                return Err(ForgeError::Loss(format!("example {i}: label {bad} outside {} classes", self.config.num_labels)));
            }
        }
        let total: usize = batch.iter().map(|(_, g)| g.iter().flatten().count()).sum();
        if total == 0 {
            return Err(ForgeError::Loss("every position is ignored".into()));
        }
        let scale = 1.0 / total as f64;
        let (sum, grads) = accumulate(self, batch, |i, (ids, gold), g| {
            let pos: Vec<usize> = (0..gold.len()).filter(|&p| gold[p].is_some()).collect();
            if pos.is_empty() {
                return Ok(0.0);
            }
            let labels: Vec<usize> = pos.iter().map(|&p| gold[p].expect("filtered")).collect();
            let cache = self.forward(ids, example_seed(seed, i))?;
            let hp = cache.hidden.select(Axis(0), &pos);
            let logits = hp.dot(&self.tok_cls_w) + &self.tok_cls_b;
            let (loss, dlogits) = cross_entropy(&logits, &labels, scale);
            general_mat_mul(1.0, &hp.t(), &dlogits, 1.0, &mut g.tok_cls_w);
            g.tok_cls_b += &dlogits.sum_axis(Axis(0));
            let dhp = dlogits.dot(&self.tok_cls_w.t());
            let mut dh = Array2::zeros(cache.hidden.raw_dim());
            for (r, &p) in pos.iter().enumerate() {
                dh.row_mut(p).assign(&dhp.row(r));
            }
            self.backward(&cache, &dh, g);
            Ok(loss)
        })?;
        Ok((sum * scale, grads))
    }

    /// Arg-max label per position (lowest index on ties).
    pub fn token_cls_predict(&self, ids: &[u32]) -> Result<Vec<usize>> {
        let logits = self.token_logits(&self.encode(ids)?);
        Ok(logits.rows().into_iter().map(argmax).collect())
    }

    pub fn seq_logits(&self, ids: &[u32]) -> Result<Array1<f64>> {
        let h = self.encode(ids)?;
        Ok(h.row(0).dot(&self.seq_cls_w) + &self.seq_cls_b)
    }

    /// Mean cross-entropy of the two-way head on the first position.
    pub fn seq_cls_loss(&self, batch: &[(Vec<u32>, usize)], seed: Option<u64>) -> Result<(f64, EncoderParams)> {
        if batch.is_empty() {
            return Err(ForgeError::Loss("no sequences to classify".into()));
        }
        if let Some((_, l)) = batch.iter().find(|(_, l)| *l > 1) {
            return Err(ForgeError::Loss(format!("sequence label must be 0 or 1, got {l}")));
        }
        let scale = 1.0 / batch.len() as f64;
        let (sum, grads) = accumulate(self, batch, |i, (ids, label), g| {
            let cache = self.forward(ids, example_seed(seed, i))?;
            let h0 = cache.hidden.select(Axis(0), &[0]);
            let logits = h0.dot(&self.seq_cls_w) + &self.seq_cls_b;
            let (loss, dlogits) = cross_entropy(&logits, &[*label], scale);
            general_mat_mul(1.0, &h0.t(), &dlogits, 1.0, &mut g.seq_cls_w);
            g.seq_cls_b += &dlogits.sum_axis(Axis(0));
            let mut dh = Array2::zeros(cache.hidden.raw_dim());
            dh.row_mut(0).assign(&dlogits.dot(&self.seq_cls_w.t()).row(0));
            self.backward(&cache, &dh, g);
            Ok(loss)
        })?;
        Ok((sum * scale, grads))
    }

    pub fn seq_cls_predict(&self, ids: &[u32]) -> Result<usize> {
        Ok(argmax(self.seq_logits(ids)?.view()))
    }
}

fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
