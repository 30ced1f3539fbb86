//! Spectral clustering of the post-processed representation matrix into
//! pseudo-labels.

use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bd::AffinitySystem;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::linalg::{k_smallest_eigs, normalize_rows, EigMethod};
use crate::losses::affinity_of;
use crate::selfexpr::{postprocess_c, PostprocessConfig};
use crate::Scalar;

/// Independent k-means++ restarts per clustering call.
pub const KMEANS_RESTARTS: u64 = 20;
pub const KMEANS_MAX_ITER: usize = 300;

/// Rows of the unit-normalized eigenvectors for the `k` smallest eigenvalues
/// of the normalized Laplacian of `a`. Numerically zero rows stay zero.
pub fn spectral_embed<T: Scalar>(a: &Array2<T>, k: usize) -> Result<Array2<T>> {
    let sys = AffinitySystem::from_affinity(a.clone())?;
    let mut v = k_smallest_eigs(&sys.laplacian, k, EigMethod::Auto)?.vectors;
    normalize_rows(&mut v, T::lit(1e-12));
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult<T> {
    pub labels: Vec<usize>,
    pub centroids: Array2<T>,
    pub inertia: f64,
}

fn sq_dist<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> f64 {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y).as_f64().powi(2)).sum()
}

fn nearest<T: Scalar>(p: ArrayView1<'_, T>, centroids: &Array2<T>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_seed<T: Scalar>(points: &Array2<T>, k: usize, rng: &mut ChaCha8Rng) -> Result<Array2<T>> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, points.row(first))).collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid(format!("k-means needs at least k={k} distinct points")));
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        if d2[pick] == 0.0 {
            pick = d2.iter().rposition(|&w| w > 0.0).expect("positive total");
        }
        centroids.row_mut(j).assign(&points.row(pick));
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(pick)));
        }
    }
    Ok(centroids)
}

/// One k-means++ seeding followed by Lloyd iterations.
///
/// An empty cluster is re-seeded at the point farthest from its assigned
/// centroid (lowest index on ties).
pub fn kmeans_single<T: Scalar>(points: &Array2<T>, k: usize, rng: &mut ChaCha8Rng, max_iter: usize) -> Result<KMeansResult<T>> {
    let n = points.nrows();
    let mut centroids = plus_plus_seed(points, k, rng)?;
    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter.max(1) {
        let mut dists = vec![0.0; n];
        let mut changed = false;
        for (i, p) in points.rows().into_iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            dists[i] = d;
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    })
                    .ok_or_else(|| Error::invalid("k-means could not fill an empty cluster"))?;
                counts[labels[far]] -= 1;
                labels[far] = j;
                counts[j] = 1;
                dists[far] = 0.0;
                changed = true;
            }
        }
        centroids.fill(T::zero());
        for (i, p) in points.rows().into_iter().enumerate() {
            let mut c = centroids.row_mut(labels[i]);
            c += &p;
        }
        for (j, mut c) in centroids.axis_iter_mut(Axis(0)).enumerate() {
            c.mapv_inplace(|v| v / T::lit(counts[j] as f64));
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .rows()
        .into_iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, centroids.row(l)))
        .sum();
    Ok(KMeansResult { labels, centroids, inertia })
}

/// Best of [`KMEANS_RESTARTS`] seeded runs by inertia; ties go to the
/// earlier restart. Deterministic for a fixed `seed`.
pub fn kmeans<T: Scalar>(points: &Array2<T>, k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult<T>> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k-means needs 1 <= k <= N, got k={k}, N={n}")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let mut best: Option<KMeansResult<T>> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart);
        let r = kmeans_single(points, k, &mut rng, max_iter)?;
        if best.as_ref().is_none_or(|b| r.inertia < b.inertia) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// `N x k` one-hot matrix of `labels`.
pub fn one_hot<T: Scalar>(labels: &[usize], k: usize) -> Array2<T> {
    let mut q = Array2::zeros((labels.len(), k));
    for (i, &l) in labels.iter().enumerate() {
        q[[i, l]] = T::one();
    }
    q
}

/// Current cluster assignment used as self-supervision targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelState<T> {
    pub labels: Vec<usize>,
    pub q_onehot: Array2<T>,
    /// `k x k` logit-space centroids, maintained by the classifier head.
    pub centroids: Array2<T>,
    pub epoch: usize,
}

impl<T: Scalar> PseudoLabelState<T> {
    pub fn from_labels(labels: Vec<usize>, k: usize, epoch: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("label {bad} out of range for k={k}")));
        }
        Ok(PseudoLabelState {
            q_onehot: one_hot(&labels, k),
            centroids: Array2::zeros((k, k)),
            labels,
            epoch,
        })
    }

    pub fn k(&self) -> usize {
        self.q_onehot.ncols()
    }

    pub fn nonempty_clusters(&self) -> usize {
        let mut seen = vec![false; self.k()];
        for &l in &self.labels {
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }

    /// CSV with header `index,label,epoch`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(checkpoint::create(path)?);
        let err = |e: csv::Error| Error::Data { path: path.into(), message: e.to_string() };
        w.write_record(["index", "label", "epoch"]).map_err(err)?;
        for (i, &l) in self.labels.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string(), self.epoch.to_string()]).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Post-process `C`, embed its affinity and cluster the embedding.
pub fn make_pseudo_labels<T: Scalar>(c: &Array2<T>, k: usize, pp: &PostprocessConfig, seed: u64) -> Result<PseudoLabelState<T>> {
    let cleaned = postprocess_c(c, pp)?;
    let embedding = spectral_embed(&affinity_of(&cleaned), k)?;
    let result = kmeans(&embedding, k, seed, KMEANS_MAX_ITER)?;
    PseudoLabelState::from_labels(result.labels, k, 0)
}
