use ndarray::{Array1, Array2, NdFloat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, Separation};
use crate::dataset::Modality;
use crate::{Error, Result};

/// Weights of one transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F> {
    pub ln1_gain: Array1<F>,
    pub ln1_bias: Array1<F>,
    /// Fused query/key/value projection, `model_dim x 3 model_dim`.
    pub w_qkv: Array2<F>,
    pub b_qkv: Array1<F>,
    pub w_out: Array2<F>,
    pub b_out: Array1<F>,
    pub ln2_gain: Array1<F>,
    pub ln2_bias: Array1<F>,
    pub w_fc: Array2<F>,
    pub b_fc: Array1<F>,
    pub w_proj: Array2<F>,
    pub b_proj: Array1<F>,
}

/// Input embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables<F> {
    /// `vocab_size x model_dim`; used for every NL position and for code
    /// positions of tokens without an overlay row.
    pub base: Array2<F>,
    /// Code-specific rows: one per separated token under PES, a full table
    /// under FES, empty when shared.
    pub code_overlay: Array2<F>,
    /// Token id of each overlay row.
    pub overlay_ids: Vec<u32>,
    /// Overlay row of each token id, if any.
    pub overlay_row: Vec<Option<u32>>,
    /// `context x model_dim`.
    pub positional: Array2<F>,
}

impl<F: NdFloat> EmbeddingTables<F> {
    /// The row that embeds `id` at a position of modality `m`.
    pub fn row(&self, id: u32, m: Modality) -> ndarray::ArrayView1<'_, F> {
        match (m, self.overlay_row[id as usize]) {
            (Modality::Code, Some(r)) => self.code_overlay.row(r as usize),
            _ => self.base.row(id as usize),
        }
    }

    /// The full table seen by positions of modality `m`.
    pub fn table(&self, m: Modality) -> Array2<F> {
        let mut table = self.base.clone();
        if m == Modality::Code {
            for (r, id) in self.overlay_ids.iter().enumerate() {
                table.row_mut(*id as usize).assign(&self.code_overlay.row(r));
            }
        }
        table
    }
}

/// All trainable weights. Also used as the gradient and optimizer-moment
/// container, since those share the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<F> {
    pub config: ModelConfig,
    pub embeddings: EmbeddingTables<F>,
    pub layers: Vec<Layer<F>>,
    pub lnf_gain: Array1<F>,
    pub lnf_bias: Array1<F>,
    /// Free output projection, `vocab_size x model_dim`, when untied.
    pub head: Option<Array2<F>>,
}

fn overlay_index(vocab: usize, ids: &[u32]) -> Vec<Option<u32>> {
    let mut rows = vec![None; vocab];
    for (r, id) in ids.iter().enumerate() {
        rows[*id as usize] = Some(r as u32);
    }
    rows
}

impl<F: NdFloat> Parameters<F> {
    /// All-zero parameters of the given shape.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let f = config.ffn_dim;
        let overlay_ids = config.overlay_ids();
        let z1 = |n| Array1::zeros(n);
        let z2 = |r, c| Array2::zeros((r, c));
        Ok(Parameters {
            config: config.clone(),
            embeddings: EmbeddingTables {
                base: z2(config.vocab_size, d),
                code_overlay: z2(overlay_ids.len(), d),
                overlay_row: overlay_index(config.vocab_size, &overlay_ids),
                overlay_ids,
                positional: z2(config.context, d),
            },
            layers: (0..config.layers)
                .map(|_| Layer {
                    ln1_gain: z1(d),
                    ln1_bias: z1(d),
                    w_qkv: z2(d, 3 * d),
                    b_qkv: z1(3 * d),
                    w_out: z2(d, d),
                    b_out: z1(d),
                    ln2_gain: z1(d),
                    ln2_bias: z1(d),
                    w_fc: z2(d, f),
                    b_fc: z1(f),
                    w_proj: z2(f, d),
                    b_proj: z1(d),
                })
                .collect(),
            lnf_gain: z1(d),
            lnf_bias: z1(d),
            head: (!config.tie_output).then(|| z2(config.vocab_size, d)),
        })
    }

    /// Same shapes as `self`, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("shape already validated")
    }

    /// Random initialisation: normal(0, 0.02) weights, residual output
    /// projections scaled by `1/sqrt(2 layers)`, unit norm gains. Any overlay
    /// is initialised by copying base rows.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 0.02;
        let residual_std = std / ((2 * config.layers) as f64).sqrt();
        let mut fill = |a: &mut [F], s: f64| {
            let normal = Normal::new(0.0, s).expect("positive std");
            for v in a {
                *v = F::from(normal.sample(&mut rng)).expect("finite");
            }
        };
        fill(slice_mut(&mut p.embeddings.base), std);
        fill(slice_mut(&mut p.embeddings.positional), std);
        for layer in &mut p.layers {
            layer.ln1_gain.fill(F::one());
            layer.ln2_gain.fill(F::one());
            fill(slice_mut(&mut layer.w_qkv), std);
            fill(slice_mut(&mut layer.w_out), residual_std);
            fill(slice_mut(&mut layer.w_fc), std);
            fill(slice_mut(&mut layer.w_proj), residual_std);
        }
        p.lnf_gain.fill(F::one());
        if let Some(head) = &mut p.head {
            fill(slice_mut(head), std);
        }
        p.copy_overlay_from_base();
        Ok(p)
    }

    fn copy_overlay_from_base(&mut self) {
        let e = &mut self.embeddings;
        for (r, id) in e.overlay_ids.iter().enumerate() {
            let row = e.base.row(*id as usize).to_owned();
            e.code_overlay.row_mut(r).assign(&row);
        }
    }

    /// Switches a shared-embedding model to `mode`, initialising every
    /// code-specific row as an exact copy of the corresponding base row. All
    /// other weights are carried over unchanged.
    pub fn separate(&self, mode: Separation, set: Option<&[u32]>) -> Result<Self> {
        if self.config.separation != Separation::Shared {
            return Err(Error::Config(format!(
                "embeddings are already separated ({})",
                self.config.separation
            )));
        }
        let mut config = self.config.clone();
        config.separation = mode;
        config.separation_set = match mode {
            Separation::Pes => Some(
                set.ok_or_else(|| Error::Config("pes separation requires a separation set".into()))?
                    .to_vec(),
            ),
            _ => None,
        };
        let mut out = Self::zeros(&config)?;
        out.embeddings.base = self.embeddings.base.clone();
        out.embeddings.positional = self.embeddings.positional.clone();
        out.layers = self.layers.clone();
        out.lnf_gain = self.lnf_gain.clone();
        out.lnf_bias = self.lnf_bias.clone();
        out.head = self.head.clone();
        out.copy_overlay_from_base();
        Ok(out)
    }

    /// Every tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[F], Vec<usize>)> {
        let mut out: Vec<(String, &[F], Vec<usize>)> = Vec::new();
        let e = &self.embeddings;
        out.push(("embed.base".into(), slice(&e.base), e.base.shape().to_vec()));
        out.push(("embed.code_overlay".into(), slice(&e.code_overlay), e.code_overlay.shape().to_vec()));
        out.push(("embed.positional".into(), slice(&e.positional), e.positional.shape().to_vec()));
        for (i, l) in self.layers.iter().enumerate() {
            let n = |s: &str| format!("layer{i}.{s}");
            out.push((n("ln1_gain"), slice1(&l.ln1_gain), vec![l.ln1_gain.len()]));
            out.push((n("ln1_bias"), slice1(&l.ln1_bias), vec![l.ln1_bias.len()]));
            out.push((n("w_qkv"), slice(&l.w_qkv), l.w_qkv.shape().to_vec()));
            out.push((n("b_qkv"), slice1(&l.b_qkv), vec![l.b_qkv.len()]));
            out.push((n("w_out"), slice(&l.w_out), l.w_out.shape().to_vec()));
            out.push((n("b_out"), slice1(&l.b_out), vec![l.b_out.len()]));
            out.push((n("ln2_gain"), slice1(&l.ln2_gain), vec![l.ln2_gain.len()]));
            out.push((n("ln2_bias"), slice1(&l.ln2_bias), vec![l.ln2_bias.len()]));
            out.push((n("w_fc"), slice(&l.w_fc), l.w_fc.shape().to_vec()));
            out.push((n("b_fc"), slice1(&l.b_fc), vec![l.b_fc.len()]));
            out.push((n("w_proj"), slice(&l.w_proj), l.w_proj.shape().to_vec()));
            out.push((n("b_proj"), slice1(&l.b_proj), vec![l.b_proj.len()]));
        }
        out.push(("lnf_gain".into(), slice1(&self.lnf_gain), vec![self.lnf_gain.len()]));
        out.push(("lnf_bias".into(), slice1(&self.lnf_bias), vec![self.lnf_bias.len()]));
        if let Some(h) = &self.head {
            out.push(("head".into(), slice(h), h.shape().to_vec()));
        }
        out
    }

    /// Mutable views in the same order as [`Parameters::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        let e = &mut self.embeddings;
        out.push(slice_mut(&mut e.base));
        out.push(slice_mut(&mut e.code_overlay));
        out.push(slice_mut(&mut e.positional));
        for l in &mut self.layers {
            out.push(slice1_mut(&mut l.ln1_gain));
            out.push(slice1_mut(&mut l.ln1_bias));
            out.push(slice_mut(&mut l.w_qkv));
            out.push(slice1_mut(&mut l.b_qkv));
            out.push(slice_mut(&mut l.w_out));
            out.push(slice1_mut(&mut l.b_out));
            out.push(slice1_mut(&mut l.ln2_gain));
            out.push(slice1_mut(&mut l.ln2_bias));
            out.push(slice_mut(&mut l.w_fc));
            out.push(slice1_mut(&mut l.b_fc));
            out.push(slice_mut(&mut l.w_proj));
            out.push(slice1_mut(&mut l.b_proj));
        }
        out.push(slice1_mut(&mut self.lnf_gain));
        out.push(slice1_mut(&mut self.lnf_bias));
        if let Some(h) = &mut self.head {
            out.push(slice_mut(h));
        }
        out
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, t, _)| t.len()).sum()
    }

    /// Number of embedding rows, base plus overlay.
    pub fn embedding_rows(&self) -> usize {
        self.embeddings.base.nrows() + self.embeddings.code_overlay.nrows()
    }

    /// Global L2 norm over all tensors.
    pub fn l2_norm(&self) -> F {
        self.tensors()
            .iter()
            .flat_map(|(_, t, _)| t.iter())
            .fold(F::zero(), |acc, v| acc + *v * *v)
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t, _)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += other * scale`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: F) {
        let src = other.tensors();
        for (dst, (_, s, _)) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += *v * scale;
            }
        }
    }

    pub fn scale(&mut self, factor: F) {
        for t in self.tensors_mut() {
            for v in t {
                *v *= factor;
            }
        }
    }

    /// Element-wise conversion to another float type.
    pub fn cast<G: NdFloat>(&self) -> Parameters<G> {
        let mut out = Parameters::<G>::zeros(&self.config).expect("shape already validated");
        let src = self.tensors();
        for (dst, (_, s, _)) in out.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d = G::from(*v).expect("representable");
            }
        }
        out
    }
}

fn slice<F>(a: &Array2<F>) -> &[F] {
    a.as_slice().expect("standard layout")
}

fn slice1<F>(a: &Array1<F>) -> &[F] {
    a.as_slice().expect("standard layout")
}

fn slice_mut<F>(a: &mut Array2<F>) -> &mut [F] {
    a.as_slice_mut().expect("standard layout")
}

fn slice1_mut<F>(a: &mut Array1<F>) -> &mut [F] {
    a.as_slice_mut().expect("standard layout")
}
