//! Incremental decoding with a key/value cache.

use ndarray::{s, Array1, Array2, Axis, NdFloat};

use super::params::Parameters;
use super::transformer::{cast, embed, gelu, head_logits, head_slices, layer_forward, layer_norm, Sequence};
use crate::dataset::Modality;
use crate::{Error, Result};

/// Decoding state for one sequence: cached keys and values per layer.
pub struct Session<'a, F> {
    params: &'a Parameters<F>,
    keys: Vec<Array2<F>>,
    values: Vec<Array2<F>>,
    len: usize,
}

impl<'a, F: NdFloat> Session<'a, F> {
    pub fn new(params: &'a Parameters<F>) -> Self {
        let cfg = &params.config;
        let empty = || (0..cfg.layers).map(|_| Array2::zeros((cfg.context, cfg.model_dim))).collect();
        Session {
            params,
            keys: empty(),
            values: empty(),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Room left in the context window.
    pub fn remaining(&self) -> usize {
        self.params.config.context - self.len
    }

    /// Runs the prompt, whose first `prefix` tokens attend bidirectionally,
    /// and returns the logits for the next (code) token.
    pub fn prefill(&mut self, ids: &[u32], modality: &[Modality], prefix: usize) -> Result<Array1<F>> {
        if self.len != 0 {
            return Err(Error::Data("prefill on a non-empty session".into()));
        }
        if ids.is_empty() {
            return Err(Error::Data("empty prompt".into()));
        }
        let seq = Sequence::single(ids.to_vec(), modality.to_vec(), prefix)?;
        let p = self.params;
        let d = p.config.model_dim;
        let mut x = embed(p, &seq)?;
        for (index, l) in p.layers.iter().enumerate() {
            let (out, cache) = layer_forward(l, &x, &seq.mask, p.config.heads);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: index });
            }
            let n = ids.len();
            self.keys[index].slice_mut(s![..n, ..]).assign(&cache.qkv.slice(s![.., d..2 * d]));
            self.values[index].slice_mut(s![..n, ..]).assign(&cache.qkv.slice(s![.., 2 * d..]));
            x = out;
        }
        self.len = ids.len();
        let last = x.slice(s![x.nrows() - 1.., ..]).to_owned();
        Ok(self.finish(last))
    }

    /// Appends one token and returns the logits for the token after it.
    pub fn step(&mut self, id: u32, modality: Modality) -> Result<Array1<F>> {
        let p = self.params;
        let cfg = &p.config;
        if self.len >= cfg.context {
            return Err(Error::InstanceTooLong {
                len: self.len + 1,
                context: cfg.context,
            });
        }
        if id as usize >= cfg.vocab_size {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: cfg.vocab_size,
            });
        }
        let d = cfg.model_dim;
        let dh = cfg.head_dim();
        let scale: F = cast(1.0 / (dh as f64).sqrt());
        let pos = self.len;
        let mut x = Array2::zeros((1, d));
        x.row_mut(0).assign(&p.embeddings.row(id, modality));
        x += &p.embeddings.positional.row(pos);
        for (index, l) in p.layers.iter().enumerate() {
            let (a, _) = layer_norm(&x, &l.ln1_gain, &l.ln1_bias);
            let qkv = a.dot(&l.w_qkv) + &l.b_qkv;
            self.keys[index].row_mut(pos).assign(&qkv.slice(s![0, d..2 * d]));
            self.values[index].row_mut(pos).assign(&qkv.slice(s![0, 2 * d..]));
            let mut attn = Array2::zeros((1, d));
            for h in 0..cfg.heads {
                let [qc, _, _] = head_slices(d, dh, h);
                let q = qkv.slice(s![0, qc.clone()]);
                let k = self.keys[index].slice(s![..=pos, qc.clone()]);
                let v = self.values[index].slice(s![..=pos, qc.clone()]);
                let mut scores: Array1<F> = k.dot(&q) * scale;
                let max = scores.iter().fold(F::neg_infinity(), |m, v| if *v > m { *v } else { m });
                scores.mapv_inplace(|v| (v - max).exp());
                let total = scores.sum();
                scores.mapv_inplace(|v| v / total);
                attn.slice_mut(s![0, qc]).assign(&v.t().dot(&scores));
            }
            let x1 = &x + &(attn.dot(&l.w_out) + &l.b_out);
            let (c, _) = layer_norm(&x1, &l.ln2_gain, &l.ln2_bias);
            let g = (c.dot(&l.w_fc) + &l.b_fc).mapv(gelu);
            x = &x1 + &(g.dot(&l.w_proj) + &l.b_proj);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: index });
            }
        }
        self.len += 1;
        Ok(self.finish(x))
    }

    fn finish(&self, last: Array2<F>) -> Array1<F> {
        let p = self.params;
        let (h, _) = layer_norm(&last, &p.lnf_gain, &p.lnf_bias);
        head_logits(p, h.view(), &[Modality::Code]).index_axis_move(Axis(0), 0)
    }
}
