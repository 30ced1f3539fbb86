//! Softmax classifier on the latent code, logit-space centroids and
//! cluster-id alignment between refinements.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::metrics::best_matching;
use crate::nn::{softmax_rows, Dense, GradientTape};
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<T> {
    pub fc: Dense<T>,
    /// `k x k`, one row per cluster.
    pub centroids: Array2<T>,
}

/// Index of the largest entry; the first wins on ties.
pub fn argmax<T: Scalar>(row: impl IntoIterator<Item = T>) -> usize {
    let mut best = (0, T::neg_infinity());
    for (i, v) in row.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

impl<T: Scalar> ClassifierHead<T> {
    pub fn new<R: Rng + ?Sized>(latent_dim: usize, k: usize, rng: &mut R) -> Self {
        ClassifierHead {
            fc: Dense::new(latent_dim, k, rng),
            centroids: Array2::zeros((k, k)),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.fc.dims().0
    }

    pub fn k(&self) -> usize {
        self.fc.dims().1
    }

    /// `[N, latent_dim] -> [N, k]` logits.
    pub fn logits(&self, z: ArrayView2<'_, T>) -> Result<Array2<T>> {
        Ok(self.fc.forward(&Tensor::from_matrix(&z.to_owned()))?.to_rows())
    }

    /// Logits and softmax probabilities for one latent vector.
    pub fn classify(&self, z: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let m = ArrayView2::from_shape((1, z.len()), z).expect("single row");
        let (logits, probs) = self.classify_batch(m)?;
        Ok((logits.into_raw_vec_and_offset().0, probs.into_raw_vec_and_offset().0))
    }

    pub fn classify_batch(&self, z: ArrayView2<'_, T>) -> Result<(Array2<T>, Array2<T>)> {
        let logits = self.logits(z)?;
        let probs = softmax_rows(logits.view());
        Ok((logits, probs))
    }

    pub fn predict(&self, z: ArrayView2<'_, T>) -> Result<Vec<usize>> {
        let logits = self.logits(z)?;
        Ok(logits.rows().into_iter().map(|r| argmax(r.iter().copied())).collect())
    }

    /// Gradient with respect to `z` and the parameter tape, given `dL/dlogits`.
    pub fn backward(&self, z: ArrayView2<'_, T>, upstream: &Array2<T>) -> Result<(Array2<T>, GradientTape<T>)> {
        let (dz, tape) = self.fc.backward(&Tensor::from_matrix(&z.to_owned()), &Tensor::from_matrix(upstream))?;
        Ok((dz.to_rows(), tape))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.fc.weight, &mut self.fc.bias]
    }

    pub fn update_centroids(&mut self, logits: &Array2<T>, labels: &[usize]) -> Result<()> {
        self.centroids = update_centroids(&self.centroids, logits, labels)?;
        Ok(())
    }
}

/// Per-cluster mean of `logits`; a cluster with no members keeps its
/// previous row.
pub fn update_centroids<T: Scalar>(previous: &Array2<T>, logits: &Array2<T>, labels: &[usize]) -> Result<Array2<T>> {
    if labels.len() != logits.nrows() {
        return Err(Error::shape("centroid update labels", logits.nrows(), labels.len()));
    }
    if previous.ncols() != logits.ncols() {
        return Err(Error::shape("centroid update logits", previous.ncols(), logits.ncols()));
    }
    let k = previous.nrows();
    let mut sums = Array2::<T>::zeros(previous.raw_dim());
    let mut counts = vec![0usize; k];
    for (row, &l) in logits.axis_iter(Axis(0)).zip(labels) {
        if l >= k {
            return Err(Error::invalid(format!("label {l} out of range for k={k}")));
        }
        let mut s = sums.row_mut(l);
        s += &row;
        counts[l] += 1;
    }
    let mut out = previous.clone();
    for (j, &n) in counts.iter().enumerate() {
        if n > 0 {
            let mean = sums.row(j).mapv(|v| v / T::lit(n as f64));
            out.row_mut(j).assign(&mean);
        }
    }
    Ok(out)
}

/// Renames the clusters in `new` so they overlap `previous` as much as
/// possible (Hungarian matching on the co-occurrence counts).
pub fn align_labels(previous: &[usize], new: &[usize], k: usize) -> Result<Vec<usize>> {
    if previous.len() != new.len() {
        return Err(Error::shape("label alignment", previous.len(), new.len()));
    }
    let mut counts = vec![vec![0i64; k]; k];
    for (&p, &n) in previous.iter().zip(new) {
        if p >= k || n >= k {
            return Err(Error::invalid(format!("label out of range for k={k}")));
        }
        counts[n][p] += 1;
    }
    let (_, mapping) = best_matching(&counts);
    Ok(new.iter().map(|&n| mapping[n]).collect())
}
