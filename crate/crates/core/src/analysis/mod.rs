//! Embedding-space inspection: per-modality cosine nearest neighbours and a
//! seeded 2D layout of selected rows.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Modality;
use crate::eval::pearson;
use crate::model::Parameters;
use crate::tokenizer::{TokenId, Vocabulary};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub token: String,
    pub id: TokenId,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborReport {
    pub query: String,
    pub space: Modality,
    /// Most similar first; the query itself is excluded.
    pub neighbors: Vec<Neighbor>,
}

pub fn cosine(a: ArrayView1<'_, f32>, b: ArrayView1<'_, f32>) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b.iter()) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb).sqrt()
}

fn display(vocab: &Vocabulary, id: TokenId) -> String {
    vocab.token(id).unwrap_or_default().to_owned()
}

/// Resolves a query string to a vocabulary id, accepting either the raw
/// token or its surface form (a leading space for the word-boundary mark).
pub fn resolve_token(vocab: &Vocabulary, token: &str) -> Result<TokenId> {
    if let Some(id) = vocab.id(token) {
        return Ok(id);
    }
    (0..vocab.size() as TokenId)
        .find(|id| vocab.surface(*id) == Some(token))
        .ok_or_else(|| Error::UnknownToken(token.to_owned()))
}

/// The `top_k` rows of `space` most cosine-similar to the query's row in
/// that space. Ties are broken by id. In shared mode both spaces coincide.
pub fn nearest_neighbors(
    params: &Parameters<f32>,
    vocab: &Vocabulary,
    token: &str,
    space: Modality,
    top_k: usize,
) -> Result<NeighborReport> {
    let query = resolve_token(vocab, token)?;
    let emb = &params.embeddings;
    let q = emb.row(query, space);
    let mut scored: Vec<(TokenId, f64)> = (0..params.config.vocab_size as TokenId)
        .filter(|id| *id != query)
        .map(|id| (id, cosine(q, emb.row(id, space))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(top_k);
    Ok(NeighborReport {
        query: token.to_owned(),
        space,
        neighbors: scored
            .into_iter()
            .map(|(id, similarity)| Neighbor {
                token: display(vocab, id),
                id,
                similarity,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    /// Seeded stochastic-neighbour embedding with Student-t affinities.
    Sne,
    Pca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub token: String,
    pub id: TokenId,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub space: Modality,
    pub method: ProjectionMethod,
    pub points: Vec<Point>,
    /// Spearman correlation between pairwise cosine distances and 2D
    /// distances; absent when either is constant.
    pub rank_correlation: Option<f64>,
}

fn cosine_distances(rows: &Array2<f64>) -> Array2<f64> {
    let n = rows.nrows();
    let norms: Vec<f64> = rows.outer_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let denom = norms[i] * norms[j];
            let sim = if denom == 0.0 { 0.0 } else { rows.row(i).dot(&rows.row(j)) / denom };
            let v = (1.0 - sim).max(0.0);
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Top-two principal-component scores by power iteration.
pub fn pca_2d(rows: &Array2<f64>) -> Array2<f64> {
    let mean = rows.mean_axis(Axis(0)).expect("non-empty rows");
    let centered = rows - &mean;
    let cov = centered.t().dot(&centered);
    let dim = cov.nrows();
    let mut out = Array2::zeros((rows.nrows(), 2));
    let mut deflated = cov.clone();
    for c in 0..2 {
        let mut v = Array1::from_shape_fn(dim, |i| 1.0 + i as f64 / dim as f64);
        let mut lambda = 0.0;
        for _ in 0..200 {
            let w = deflated.dot(&v);
            let norm = w.dot(&w).sqrt();
            if norm < 1e-300 {
                break;
            }
            lambda = norm;
            v = w / norm;
        }
        if lambda == 0.0 {
            continue;
        }
        out.column_mut(c).assign(&centered.dot(&v));
        let outer = v.view().insert_axis(Axis(1)).dot(&v.view().insert_axis(Axis(0)));
        deflated = deflated - outer * lambda;
    }
    out
}

/// Conditional affinities with a per-point Gaussian bandwidth matched to
/// `perplexity`, symmetrized.
fn affinities(dist: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = dist.nrows();
    let target = perplexity.ln();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
        for _ in 0..64 {
            let row: Vec<f64> = (0..n)
                .map(|j| if i == j { 0.0 } else { (-beta * dist[[i, j]] * dist[[i, j]]).exp() })
                .collect();
            let total: f64 = row.iter().sum::<f64>().max(1e-300);
            let entropy: f64 = row
                .iter()
                .map(|v| v / total)
                .filter(|v| *v > 0.0)
                .map(|v| -v * v.ln())
                .sum();
            for j in 0..n {
                p[[i, j]] = row[j] / total;
            }
            if (entropy - target).abs() < 1e-6 {
                break;
            }
            if entropy > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    }
    let sym = &p + &p.t();
    sym / (2.0 * n as f64)
}

fn sne_2d(dist: &Array2<f64>, seed: u64) -> Array2<f64> {
    let n = dist.nrows();
    let perplexity = ((n - 1) as f64 / 3.0).clamp(2.0, 30.0);
    let p = affinities(dist, perplexity);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y = Array2::from_shape_fn((n, 2), |_| normal.sample(&mut rng));
    let mut velocity = Array2::<f64>::zeros((n, 2));
    let learning_rate = 10.0;
    for iter in 0..600 {
        let exaggeration = if iter < 100 { 4.0 } else { 1.0 };
        let momentum = if iter < 100 { 0.5 } else { 0.8 };
        let mut kernel = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let dx = y[[i, 0]] - y[[j, 0]];
                    let dy = y[[i, 1]] - y[[j, 1]];
                    kernel[[i, j]] = 1.0 / (1.0 + dx * dx + dy * dy);
                }
            }
        }
        let z = kernel.sum().max(1e-300);
        let mut grad = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (exaggeration * p[[i, j]] - kernel[[i, j]] / z) * kernel[[i, j]];
                for c in 0..2 {
                    grad[[i, c]] += 4.0 * w * (y[[i, c]] - y[[j, c]]);
                }
            }
        }
        velocity = velocity * momentum - grad * learning_rate;
        y = y + &velocity;
        let mean = y.mean_axis(Axis(0)).expect("non-empty");
        y -= &mean;
    }
    y
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0;
        for k in i..=j {
            ranks[order[k]] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Lays out the rows of `ids` in the plane. Falls back to PCA when the rows
/// are indistinguishable or the stochastic layout fails.
pub fn project_2d(
    params: &Parameters<f32>,
    vocab: &Vocabulary,
    ids: &[TokenId],
    space: Modality,
    seed: u64,
) -> Result<Projection> {
    if ids.len() < 3 {
        return Err(Error::Data(format!("projection needs at least 3 tokens, got {}", ids.len())));
    }
    let dim = params.config.model_dim;
    let mut rows = Array2::<f64>::zeros((ids.len(), dim));
    for (i, id) in ids.iter().enumerate() {
        if *id as usize >= params.config.vocab_size {
            return Err(Error::TokenOutOfRange {
                id: *id,
                vocab_size: params.config.vocab_size,
            });
        }
        rows.row_mut(i).assign(&params.embeddings.row(*id, space).mapv(|v| v as f64));
    }
    let dist = cosine_distances(&rows);
    let spread = dist.iter().fold(0.0f64, |m, v| m.max(*v));
    let (method, coords) = if spread > 1e-12 {
        let y = sne_2d(&dist, seed);
        if y.iter().all(|v| v.is_finite()) {
            (ProjectionMethod::Sne, y)
        } else {
            (ProjectionMethod::Pca, pca_2d(&rows))
        }
    } else {
        (ProjectionMethod::Pca, pca_2d(&rows))
    };
    let n = ids.len();
    let mut high = Vec::new();
    let mut low = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            high.push(dist[[i, j]]);
            let (dx, dy) = (coords[[i, 0]] - coords[[j, 0]], coords[[i, 1]] - coords[[j, 1]]);
            low.push((dx * dx + dy * dy).sqrt());
        }
    }
    Ok(Projection {
        space,
        method,
        points: ids
            .iter()
            .enumerate()
            .map(|(i, id)| Point {
                token: display(vocab, *id),
                id: *id,
                x: coords[[i, 0]],
                y: coords[[i, 1]],
            })
            .collect(),
        rank_correlation: spearman(&high, &low).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![2.5, 0.0, 2.5, 1.0]);
    }

    #[test]
    fn pca_recovers_a_line() {
        let rows = Array2::from_shape_fn((5, 3), |(i, j)| i as f64 * [1.0, 2.0, -1.0][j]);
        let y = pca_2d(&rows);
        let xs: Vec<f64> = y.column(0).to_vec();
        assert!(xs.windows(2).all(|w| w[0] < w[1]) || xs.windows(2).all(|w| w[0] > w[1]));
        assert!(y.column(1).iter().all(|v| v.abs() < 1e-9));
    }
}
