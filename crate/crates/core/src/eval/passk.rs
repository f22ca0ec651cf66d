//! Unbiased pass@k estimator.

use crate::{Error, Result};

/// Probability that a uniformly drawn `k`-subset of `n` samples, `c` of them
/// correct, holds at least one correct sample.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::KExceedsN { k, n });
    }
    if c > n {
        return Err(Error::Data(format!("c = {c} exceeds n = {n}")));
    }
    if n - c < k {
        return Ok(1.0);
    }
    let kf = k as f64;
    let miss: f64 = ((n - c + 1)..=n).map(|i| 1.0 - kf / i as f64).product();
    Ok(1.0 - miss)
}

/// Mean pass@k over `(n, c)` pairs with equal weight.
pub fn mean_pass_at_k(counts: &[(usize, usize)], k: usize) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::Data("no prompts to average".into()));
    }
    let mut total = 0.0;
    for &(n, c) in counts {
        total += pass_at_k(n, c, k)?;
    }
    Ok(total / counts.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_values() {
        assert_eq!(pass_at_k(200, 0, 10).unwrap(), 0.0);
        assert_eq!(pass_at_k(200, 200, 100).unwrap(), 1.0);
        assert!((pass_at_k(5, 2, 2).unwrap() - 0.7).abs() < 1e-15);
        assert!(matches!(pass_at_k(3, 1, 4), Err(Error::KExceedsN { k: 4, n: 3 })));
    }
}
