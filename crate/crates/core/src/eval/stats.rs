//! Cross-benchmark correlation of checkpoint scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Data(format!("series lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Data("need at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Scores of the successive checkpoints of one training run, per benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSeries {
    pub name: String,
    /// Benchmark name to pass@1 per checkpoint, in checkpoint order.
    pub scores: BTreeMap<String, Vec<f64>>,
}

/// Upper-triangular matrix of mean Pearson correlations between benchmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub benchmarks: Vec<String>,
    /// `cells[i][j]` for `i < j`; `None` where no series gave a defined value.
    pub cells: Vec<Vec<Option<f64>>>,
    /// Series that contributed to each cell.
    pub support: Vec<Vec<usize>>,
}

/// For every benchmark pair, Pearson across checkpoints within each series,
/// averaged over series. Series where either benchmark is constant are
/// skipped for that pair.
pub fn correlation_table(series: &[CheckpointSeries]) -> Result<CorrelationTable> {
    let mut benchmarks: Vec<String> = Vec::new();
    for s in series {
        for name in s.scores.keys() {
            if !benchmarks.contains(name) {
                benchmarks.push(name.clone());
            }
        }
    }
    let b = benchmarks.len();
    let mut cells = vec![vec![None; b]; b];
    let mut support = vec![vec![0; b]; b];
    for i in 0..b {
        for j in i + 1..b {
            let mut values = Vec::new();
            for s in series {
                let (Some(x), Some(y)) = (s.scores.get(&benchmarks[i]), s.scores.get(&benchmarks[j])) else {
                    continue;
                };
                match pearson(x, y) {
                    Ok(r) => values.push(r),
                    Err(Error::ZeroVariance) => {}
                    Err(e) => return Err(Error::Data(format!("series {}: {e}", s.name))),
                }
            }
            support[i][j] = values.len();
            if !values.is_empty() {
                cells[i][j] = Some(values.iter().sum::<f64>() / values.len() as f64);
            }
        }
    }
    Ok(CorrelationTable {
        benchmarks,
        cells,
        support,
    })
}

impl CorrelationTable {
    pub fn to_markdown(&self) -> String {
        let mut out = format!("| Test set | {} |\n", self.benchmarks.join(" | "));
        out.push_str(&format!("|---|{}\n", "---|".repeat(self.benchmarks.len())));
        for (i, name) in self.benchmarks.iter().enumerate() {
            let row: Vec<String> = (0..self.benchmarks.len())
                .map(|j| match self.cells[i][j] {
                    Some(v) if j > i => format!("{v:.3}"),
                    _ => "-".into(),
                })
                .collect();
            out.push_str(&format!("| {name} | {} |\n", row.join(" | ")));
        }
        out
    }
}
