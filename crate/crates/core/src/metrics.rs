//! Permutation-maximized clustering accuracy.

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;

use crate::error::{Error, Result};

/// `counts[p][t]`: samples predicted `p` with true label `t`.
pub fn contingency(pred: &[usize], truth: &[usize], k: usize) -> Result<Vec<Vec<i64>>> {
    if pred.len() != truth.len() {
        return Err(Error::shape("clustering accuracy", pred.len(), truth.len()));
    }
    if let Some(&bad) = pred.iter().chain(truth).find(|&&l| l >= k) {
        return Err(Error::invalid(format!("label {bad} out of range for k={k}")));
    }
    let mut counts = vec![vec![0i64; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[p][t] += 1;
    }
    Ok(counts)
}

/// Maximum-weight one-to-one matching of rows to columns of a square count
/// matrix. Returns `assignment[row] = column`.
pub fn best_matching(counts: &[Vec<i64>]) -> (i64, Vec<usize>) {
    if counts.is_empty() {
        return (0, vec![]);
    }
    let m = Matrix::from_rows(counts.iter().cloned()).expect("square count matrix");
    kuhn_munkres(&m)
}

/// Best fraction of agreement over all relabelings of `pred`.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    let counts = contingency(pred, truth, k)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let (matched, _) = best_matching(&counts);
    Ok(matched as f64 / pred.len() as f64)
}
