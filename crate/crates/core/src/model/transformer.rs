//! Forward pass, masked NLL and its exact reverse-mode gradient.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, NdFloat};

use super::mask::{AttentionMask, AttentionRegime};
use super::params::{Layer, Parameters};
use crate::dataset::{Modality, PackedSample};
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Model input: one row of tokens with its attention structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub ids: Vec<u32>,
    pub modality: Vec<Modality>,
    pub positions: Vec<u32>,
    pub mask: AttentionMask,
    /// `loss_mask[i] == 1` scores `ids[i]` against the logits of position
    /// `i - 1`.
    pub loss_mask: Vec<u8>,
}

impl Sequence {
    pub fn from_sample(sample: &PackedSample, regime: AttentionRegime) -> Result<Self> {
        Ok(Sequence {
            ids: sample.ids.clone(),
            modality: sample.modality.clone(),
            positions: sample.position_ids.clone(),
            mask: AttentionMask::for_sample(sample, regime)?,
            loss_mask: sample.loss_mask.clone(),
        })
    }

    /// An unpacked sequence with positions `0..len`.
    pub fn single(ids: Vec<u32>, modality: Vec<Modality>, prefix: usize) -> Result<Self> {
        let len = ids.len();
        Ok(Sequence {
            positions: (0..len as u32).collect(),
            mask: AttentionMask::single(len, prefix)?,
            loss_mask: (0..len).map(|i| u8::from(i > 0)).collect(),
            ids,
            modality,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions whose logits are scored, i.e. `i` with `loss_mask[i + 1]`.
    pub fn scored_rows(&self) -> Vec<usize> {
        (1..self.len()).filter(|t| self.loss_mask[*t] != 0).map(|t| t - 1).collect()
    }

    /// Modality of the token predicted at row `i`; past the end this is
    /// code, since generation only ever continues code.
    pub fn output_modality(&self, i: usize) -> Modality {
        self.modality.get(i + 1).copied().unwrap_or(Modality::Code)
    }
}

pub(super) fn cast<F: NdFloat>(x: f64) -> F {
    F::from(x).expect("representable constant")
}

pub(crate) struct LnCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

pub(crate) fn layer_norm<F: NdFloat>(x: &Array2<F>, gain: &Array1<F>, bias: &Array1<F>) -> (Array2<F>, LnCache<F>) {
    let d: F = cast(x.ncols() as f64);
    let eps: F = cast(LN_EPS);
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().fold(F::zero(), |a, v| a + *v * *v) / d;
        *r = F::one() / (var + eps).sqrt();
        let scale = *r;
        row.mapv_inplace(|v| v * scale);
    }
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward<F: NdFloat>(
    dy: &Array2<F>,
    cache: &LnCache<F>,
    gain: &Array1<F>,
    dgain: &mut Array1<F>,
    dbias: &mut Array1<F>,
) -> Array2<F> {
    *dbias += &dy.sum_axis(Axis(0));
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    let dxhat = dy * gain;
    let d: F = cast(dy.ncols() as f64);
    let mut dx = Array2::zeros(dy.raw_dim());
    for (i, mut out) in dx.rows_mut().into_iter().enumerate() {
        let g = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let m1 = g.sum() / d;
        let m2 = g.iter().zip(xh.iter()).fold(F::zero(), |a, (p, q)| a + *p * *q) / d;
        let r = cache.rstd[i];
        for ((o, gv), xv) in out.iter_mut().zip(g.iter()).zip(xh.iter()) {
            *o = r * (*gv - m1 - *xv * m2);
        }
    }
    dx
}

const GELU_A: f64 = 0.044715;

pub(crate) fn gelu<F: NdFloat>(u: F) -> F {
    let c: F = cast((2.0 / std::f64::consts::PI).sqrt());
    let half: F = cast(0.5);
    half * u * (F::one() + (c * (u + cast::<F>(GELU_A) * u * u * u)).tanh())
}

fn gelu_grad<F: NdFloat>(u: F) -> F {
    let c: F = cast((2.0 / std::f64::consts::PI).sqrt());
    let a: F = cast(GELU_A);
    let half: F = cast(0.5);
    let t = (c * (u + a * u * u * u)).tanh();
    half * (F::one() + t) + half * u * (F::one() - t * t) * c * (F::one() + cast::<F>(3.0) * a * u * u)
}

/// Row-wise masked softmax of `scores` in place; rows with no allowed entry
/// become all zero.
pub(super) fn masked_softmax<F: NdFloat>(scores: &mut Array2<F>, allows: impl Fn(usize, usize) -> bool) {
    for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
        let mut max = F::neg_infinity();
        for (j, v) in row.iter().enumerate() {
            if allows(i, j) && *v > max {
                max = *v;
            }
        }
        let mut total = F::zero();
        for (j, v) in row.iter_mut().enumerate() {
            if allows(i, j) {
                *v = (*v - max).exp();
                total += *v;
            } else {
                *v = F::zero();
            }
        }
        if total > F::zero() {
            row.mapv_inplace(|v| v / total);
        }
    }
}

pub(super) struct LayerCache<F> {
    ln1: LnCache<F>,
    a: Array2<F>,
    pub(super) qkv: Array2<F>,
    /// Attention probabilities, indexed `block * heads + head`.
    probs: Vec<Array2<F>>,
    attn: Array2<F>,
    ln2: LnCache<F>,
    c: Array2<F>,
    u: Array2<F>,
    g: Array2<F>,
}

pub(super) fn head_slices(d: usize, dh: usize, h: usize) -> [std::ops::Range<usize>; 3] {
    let q = h * dh;
    [q..q + dh, d + q..d + q + dh, 2 * d + q..2 * d + q + dh]
}

fn attention<F: NdFloat>(qkv: &Array2<F>, mask: &AttentionMask, heads: usize) -> (Array2<F>, Vec<Array2<F>>) {
    let d = qkv.ncols() / 3;
    let dh = d / heads;
    let scale: F = cast(1.0 / (dh as f64).sqrt());
    let mut out = Array2::zeros((qkv.nrows(), d));
    let mut probs = Vec::with_capacity(mask.blocks().len() * heads);
    for block in mask.blocks() {
        let r = block.range.clone();
        for h in 0..heads {
            let [qc, kc, vc] = head_slices(d, dh, h);
            let q = qkv.slice(s![r.clone(), qc.clone()]);
            let k = qkv.slice(s![r.clone(), kc]);
            let v = qkv.slice(s![r.clone(), vc]);
            let mut p = q.dot(&k.t()) * scale;
            masked_softmax(&mut p, |i, j| block.allows(i, j));
            out.slice_mut(s![r.clone(), qc]).assign(&p.dot(&v));
            probs.push(p);
        }
    }
    (out, probs)
}

fn attention_backward<F: NdFloat>(
    dattn: &Array2<F>,
    qkv: &Array2<F>,
    probs: &[Array2<F>],
    mask: &AttentionMask,
    heads: usize,
) -> Array2<F> {
    let d = qkv.ncols() / 3;
    let dh = d / heads;
    let scale: F = cast(1.0 / (dh as f64).sqrt());
    let mut dqkv = Array2::zeros(qkv.raw_dim());
    for (b, block) in mask.blocks().iter().enumerate() {
        let r = block.range.clone();
        for h in 0..heads {
            let p = &probs[b * heads + h];
            let [qc, kc, vc] = head_slices(d, dh, h);
            let q = qkv.slice(s![r.clone(), qc.clone()]);
            let k = qkv.slice(s![r.clone(), kc.clone()]);
            let v = qkv.slice(s![r.clone(), vc.clone()]);
            let dout = dattn.slice(s![r.clone(), qc.clone()]);
            let dp = dout.dot(&v.t());
            let dv = p.t().dot(&dout);
            let mut ds = dp;
            for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot = drow.iter().zip(prow.iter()).fold(F::zero(), |a, (x, y)| a + *x * *y);
                for (x, y) in drow.iter_mut().zip(prow.iter()) {
                    *x = *y * (*x - dot);
                }
            }
            let dq = ds.dot(&k) * scale;
            let dk = ds.t().dot(&q) * scale;
            dqkv.slice_mut(s![r.clone(), qc]).assign(&dq);
            dqkv.slice_mut(s![r.clone(), kc]).assign(&dk);
            dqkv.slice_mut(s![r.clone(), vc]).assign(&dv);
        }
    }
    dqkv
}

pub(super) fn layer_forward<F: NdFloat>(l: &Layer<F>, x: &Array2<F>, mask: &AttentionMask, heads: usize) -> (Array2<F>, LayerCache<F>) {
    let (a, ln1) = layer_norm(x, &l.ln1_gain, &l.ln1_bias);
    let qkv = a.dot(&l.w_qkv) + &l.b_qkv;
    let (attn, probs) = attention(&qkv, mask, heads);
    let x1 = x + &(attn.dot(&l.w_out) + &l.b_out);
    let (c, ln2) = layer_norm(&x1, &l.ln2_gain, &l.ln2_bias);
    let u = c.dot(&l.w_fc) + &l.b_fc;
    let g = u.mapv(gelu);
    let out = &x1 + &(g.dot(&l.w_proj) + &l.b_proj);
    let cache = LayerCache {
        ln1,
        a,
        qkv,
        probs,
        attn,
        ln2,
        c,
        u,
        g,
    };
    (out, cache)
}

fn layer_backward<F: NdFloat>(
    l: &Layer<F>,
    cache: &LayerCache<F>,
    dout: Array2<F>,
    mask: &AttentionMask,
    heads: usize,
    grad: &mut Layer<F>,
) -> Array2<F> {
    grad.b_proj += &dout.sum_axis(Axis(0));
    grad.w_proj += &cache.g.t().dot(&dout);
    let dg = dout.dot(&l.w_proj.t());
    let du = &dg * &cache.u.mapv(gelu_grad);
    grad.b_fc += &du.sum_axis(Axis(0));
    grad.w_fc += &cache.c.t().dot(&du);
    let dc = du.dot(&l.w_fc.t());
    let dx1 = dout + layer_norm_backward(&dc, &cache.ln2, &l.ln2_gain, &mut grad.ln2_gain, &mut grad.ln2_bias);

    grad.b_out += &dx1.sum_axis(Axis(0));
    grad.w_out += &cache.attn.t().dot(&dx1);
    let dattn = dx1.dot(&l.w_out.t());
    let dqkv = attention_backward(&dattn, &cache.qkv, &cache.probs, mask, heads);
    grad.b_qkv += &dqkv.sum_axis(Axis(0));
    grad.w_qkv += &cache.a.t().dot(&dqkv);
    let da = dqkv.dot(&l.w_qkv.t());
    dx1 + layer_norm_backward(&da, &cache.ln1, &l.ln1_gain, &mut grad.ln1_gain, &mut grad.ln1_bias)
}

struct Trace<F> {
    layers: Vec<LayerCache<F>>,
    lnf: LnCache<F>,
    /// Final normalised hidden states.
    h: Array2<F>,
}

fn check_input<F: NdFloat>(params: &Parameters<F>, seq: &Sequence) -> Result<()> {
    let cfg = &params.config;
    let n = seq.len();
    if n > cfg.context {
        return Err(Error::InstanceTooLong { len: n, context: cfg.context });
    }
    if seq.modality.len() != n || seq.positions.len() != n || seq.loss_mask.len() != n || seq.mask.len() != n {
        return Err(Error::Data("sequence arrays have inconsistent lengths".into()));
    }
    if let Some(id) = seq.ids.iter().find(|id| **id as usize >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id: *id,
            vocab_size: cfg.vocab_size,
        });
    }
    if let Some(p) = seq.positions.iter().find(|p| **p as usize >= cfg.context) {
        return Err(Error::Data(format!("position {p} is outside the context window {}", cfg.context)));
    }
    Ok(())
}

/// Input embedding: the modality-selected token row plus the positional row.
pub fn embed<F: NdFloat>(params: &Parameters<F>, seq: &Sequence) -> Result<Array2<F>> {
    check_input(params, seq)?;
    let e = &params.embeddings;
    let mut x = Array2::zeros((seq.len(), params.config.model_dim));
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        row.assign(&e.row(seq.ids[i], seq.modality[i]));
        row += &e.positional.row(seq.positions[i] as usize);
    }
    Ok(x)
}

fn run<F: NdFloat>(params: &Parameters<F>, seq: &Sequence) -> Result<Trace<F>> {
    let mut x = embed(params, seq)?;
    let mut layers = Vec::with_capacity(params.layers.len());
    for (index, l) in params.layers.iter().enumerate() {
        let (out, cache) = layer_forward(l, &x, &seq.mask, params.config.heads);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer: index });
        }
        layers.push(cache);
        x = out;
    }
    let (h, lnf) = layer_norm(&x, &params.lnf_gain, &params.lnf_bias);
    Ok(Trace { layers, lnf, h })
}

/// Logits for the hidden rows `h`, where row `r` predicts a token of
/// modality `out_mod[r]`. A tied head scores against the embedding table of
/// that modality.
pub(crate) fn head_logits<F: NdFloat>(params: &Parameters<F>, h: ArrayView2<F>, out_mod: &[Modality]) -> Array2<F> {
    if let Some(head) = &params.head {
        return h.dot(&head.t());
    }
    let e = &params.embeddings;
    let mut z = h.dot(&e.base.t());
    if e.overlay_ids.is_empty() {
        return z;
    }
    let code_rows: Vec<usize> = (0..h.nrows()).filter(|r| out_mod[*r] == Modality::Code).collect();
    if code_rows.is_empty() {
        return z;
    }
    let zo = h.select(Axis(0), &code_rows).dot(&e.code_overlay.t());
    for (k, r) in code_rows.iter().enumerate() {
        for (c, id) in e.overlay_ids.iter().enumerate() {
            z[[*r, *id as usize]] = zo[[k, c]];
        }
    }
    z
}

fn head_backward<F: NdFloat>(
    params: &Parameters<F>,
    h: &Array2<F>,
    out_mod: &[Modality],
    mut dz: Array2<F>,
    grad: &mut Parameters<F>,
) -> Array2<F> {
    if let Some(head) = &params.head {
        *grad.head.as_mut().expect("same shape") += &dz.t().dot(h);
        return dz.dot(head);
    }
    let e = &params.embeddings;
    let code_rows: Vec<usize> = if e.overlay_ids.is_empty() {
        Vec::new()
    } else {
        (0..h.nrows()).filter(|r| out_mod[*r] == Modality::Code).collect()
    };
    let mut dzo = Array2::zeros((code_rows.len(), e.overlay_ids.len()));
    for (k, r) in code_rows.iter().enumerate() {
        for (c, id) in e.overlay_ids.iter().enumerate() {
            dzo[[k, c]] = dz[[*r, *id as usize]];
            dz[[*r, *id as usize]] = F::zero();
        }
    }
    grad.embeddings.base += &dz.t().dot(h);
    let mut dh = dz.dot(&e.base);
    if !code_rows.is_empty() {
        let hc = h.select(Axis(0), &code_rows);
        grad.embeddings.code_overlay += &dzo.t().dot(&hc);
        let dhc = dzo.dot(&e.code_overlay);
        for (k, r) in code_rows.iter().enumerate() {
            let mut row = dh.row_mut(*r);
            row += &dhc.row(k);
        }
    }
    dh
}

/// Per-position logits, `len x vocab_size`. Row `i` parameterises the
/// distribution of token `i + 1`.
pub fn forward<F: NdFloat>(params: &Parameters<F>, seq: &Sequence) -> Result<Array2<F>> {
    let trace = run(params, seq)?;
    let out_mod: Vec<Modality> = (0..seq.len()).map(|i| seq.output_modality(i)).collect();
    Ok(head_logits(params, trace.h.view(), &out_mod))
}

fn log_softmax_row<F: NdFloat>(z: ndarray::ArrayView1<F>) -> (F, F) {
    let max = z.iter().fold(F::neg_infinity(), |m, v| if *v > m { *v } else { m });
    let sum = z.iter().fold(F::zero(), |a, v| a + (*v - max).exp());
    (max, sum.ln() + max)
}

/// Negative log-likelihood of every scored token of `seq`, as
/// `(target index, nll)`.
pub fn target_nll<F: NdFloat>(params: &Parameters<F>, seq: &Sequence) -> Result<Vec<(usize, F)>> {
    let trace = run(params, seq)?;
    let rows = seq.scored_rows();
    let out_mod: Vec<Modality> = rows.iter().map(|r| seq.output_modality(*r)).collect();
    let z = head_logits(params, trace.h.select(Axis(0), &rows).view(), &out_mod);
    Ok(rows
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let (_, lse) = log_softmax_row(z.row(k));
            (r + 1, lse - z[[k, seq.ids[r + 1] as usize]])
        })
        .collect())
}

fn scored_count(seqs: &[Sequence]) -> Result<usize> {
    let total: usize = seqs.iter().map(|s| s.scored_rows().len()).sum();
    if total == 0 {
        return Err(Error::EmptyLossMask);
    }
    Ok(total)
}

/// Mean NLL over every scored token of the batch.
pub fn loss<F: NdFloat>(params: &Parameters<F>, seqs: &[Sequence]) -> Result<F> {
    let total = scored_count(seqs)?;
    let mut sum = F::zero();
    for seq in seqs {
        for (_, nll) in target_nll(params, seq)? {
            sum += nll;
        }
    }
    Ok(sum / cast(total as f64))
}

/// Mean NLL over the batch and its exact gradient with respect to every
/// parameter.
pub fn loss_and_grad<F: NdFloat>(params: &Parameters<F>, seqs: &[Sequence]) -> Result<(F, Parameters<F>)> {
    let total = scored_count(seqs)?;
    let inv: F = cast(1.0 / total as f64);
    let mut grad = params.zeros_like();
    let mut sum = F::zero();
    for seq in seqs {
        let rows = seq.scored_rows();
        if rows.is_empty() {
            continue;
        }
        let trace = run(params, seq)?;
        let out_mod: Vec<Modality> = rows.iter().map(|r| seq.output_modality(*r)).collect();
        let hs = trace.h.select(Axis(0), &rows);
        let mut dz = head_logits(params, hs.view(), &out_mod);
        for (k, r) in rows.iter().enumerate() {
            let target = seq.ids[r + 1] as usize;
            let (_, lse) = log_softmax_row(dz.row(k));
            sum += lse - dz[[k, target]];
            let mut row = dz.row_mut(k);
            row.mapv_inplace(|v| (v - lse).exp() * inv);
            row[target] -= inv;
        }
        let dhs = head_backward(params, &hs, &out_mod, dz, &mut grad);
        let mut dh = Array2::zeros(trace.h.raw_dim());
        for (k, r) in rows.iter().enumerate() {
            dh.row_mut(*r).assign(&dhs.row(k));
        }
        let mut dx = layer_norm_backward(&dh, &trace.lnf, &params.lnf_gain, &mut grad.lnf_gain, &mut grad.lnf_bias);
        for (i, l) in params.layers.iter().enumerate().rev() {
            dx = layer_backward(l, &trace.layers[i], dx, &seq.mask, params.config.heads, &mut grad.layers[i]);
        }
        let e = &params.embeddings;
        let ge = &mut grad.embeddings;
        for (i, drow) in dx.rows().into_iter().enumerate() {
            let id = seq.ids[i];
            match (seq.modality[i], e.overlay_row[id as usize]) {
                (Modality::Code, Some(r)) => {
                    let mut row = ge.code_overlay.row_mut(r as usize);
                    row += &drow;
                }
                _ => {
                    let mut row = ge.base.row_mut(id as usize);
                    row += &drow;
                }
            }
            let mut row = ge.positional.row_mut(seq.positions[i] as usize);
            row += &drow;
        }
    }
    Ok((sum * inv, grad))
}
