//! Scalar loss terms and their analytic gradients.
//!
//! Matrix conventions: self-expression residuals `E` are `features x N`
//! (one column per sample); logits and one-hot targets are `N x k`;
//! representation matrices are `N x N`.

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    /// `||s - t||^2`, the usual correntropy kernel argument.
    #[default]
    SquaredEuclidean,
    /// `||s - t||`, unsquared.
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CimConfig {
    pub sigma: f64,
    #[serde(default)]
    pub distance: Distance,
}

impl Default for CimConfig {
    fn default() -> Self {
        CimConfig {
            sigma: 1.0,
            distance: Distance::SquaredEuclidean,
        }
    }
}

impl CimConfig {
    pub fn new(sigma: f64) -> Self {
        CimConfig {
            sigma,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(format!("kernel width sigma must be > 0, got {}", self.sigma)));
        }
        Ok(())
    }

    fn dist<T: Scalar>(&self, sq: T) -> T {
        match self.distance {
            Distance::SquaredEuclidean => sq,
            Distance::Euclidean => sq.sqrt(),
        }
    }

    fn kernel_of_sq<T: Scalar>(&self, sq: T) -> T {
        let s = T::lit(self.sigma);
        (-self.dist(sq) / (T::lit(2.0) * s * s)).exp()
    }
}

/// Error measure applied to the self-expression residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMeasure {
    Cim,
    Mse,
}

impl std::fmt::Display for ErrorMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ErrorMeasure::Cim => "CIM",
            ErrorMeasure::Mse => "MSE",
        })
    }
}

fn same_shape<T>(a: &Array2<T>, b: &Array2<T>, context: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(context, format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    Ok(())
}

fn ensure_finite<T: Scalar>(m: &Array2<T>, context: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context.into()))
    }
}

fn sq_norm<T: Scalar>(v: ArrayView1<'_, T>) -> T {
    v.iter().map(|&x| x * x).sum()
}

/// Gaussian correntropy kernel between two vectors, in `(0, 1]`.
pub fn correntropy_kernel<T: Scalar>(s: &[T], t: &[T], cfg: &CimConfig) -> Result<T> {
    cfg.validate()?;
    if s.len() != t.len() {
        return Err(Error::shape("correntropy kernel", s.len(), t.len()));
    }
    let sq: T = s.iter().zip(t).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(cfg.kernel_of_sq(sq))
}

/// Empirical correntropy: mean kernel value over paired columns.
pub fn correntropy<T: Scalar>(s: &Array2<T>, t: &Array2<T>, cfg: &CimConfig) -> Result<T> {
    cfg.validate()?;
    same_shape(s, t, "correntropy")?;
    let n = s.ncols();
    if n == 0 {
        return Ok(T::one());
    }
    let total: T = s
        .axis_iter(Axis(1))
        .zip(t.axis_iter(Axis(1)))
        .map(|(a, b)| cfg.kernel_of_sq(sq_norm((&a - &b).view())))
        .sum();
    Ok(total / T::lit(n as f64))
}

/// Correntropy-induced metric `(1 - V(S, T))^(1/2)`, in `[0, 1]`.
pub fn cim<T: Scalar>(s: &Array2<T>, t: &Array2<T>, cfg: &CimConfig) -> Result<T> {
    let v = correntropy(s, t, cfg)?;
    Ok((T::one() - v).max(T::zero()).sqrt())
}

/// `CIM^2(E, 0) = 1 - mean_i k(e_i)` and its gradient with respect to `E`.
pub fn cim_loss_and_grad<T: Scalar>(e: &Array2<T>, cfg: &CimConfig) -> Result<(T, Array2<T>)> {
    cfg.validate()?;
    ensure_finite(e, "CIM loss input")?;
    let n = e.ncols();
    let mut grad = Array2::zeros(e.raw_dim());
    if n == 0 {
        return Ok((T::zero(), grad));
    }
    let nf = T::lit(n as f64);
    let s2 = T::lit(cfg.sigma * cfg.sigma);
    let mut mean_kernel = T::zero();
    for (col, mut g) in e.axis_iter(Axis(1)).zip(grad.axis_iter_mut(Axis(1))) {
        let sq = sq_norm(col);
        let kern = cfg.kernel_of_sq(sq);
        mean_kernel += kern;
        // d/de of -k/N
        let scale = match cfg.distance {
            Distance::SquaredEuclidean => kern / (nf * s2),
            Distance::Euclidean => {
                let r = sq.sqrt();
                if r > T::zero() {
                    kern / (T::lit(2.0) * nf * s2 * r)
                } else {
                    T::zero()
                }
            }
        };
        g.zip_mut_with(&col, |gv, &ev| *gv = scale * ev);
    }
    Ok((T::one() - mean_kernel / nf, grad))
}

/// Second-order counterpart of [`cim_loss_and_grad`]:
/// `(1/N) sum_i ||e_i||^2 / (2 sigma^2)`, which `CIM^2` matches for small
/// residuals. `sigma` only rescales the term.
pub fn mse_loss_and_grad<T: Scalar>(e: &Array2<T>, cfg: &CimConfig) -> Result<(T, Array2<T>)> {
    cfg.validate()?;
    ensure_finite(e, "MSE loss input")?;
    let n = e.ncols();
    if n == 0 {
        return Ok((T::zero(), Array2::zeros(e.raw_dim())));
    }
    let denom = T::lit(n as f64 * cfg.sigma * cfg.sigma);
    let loss = e.iter().map(|&v| v * v).sum::<T>() / (T::lit(2.0) * denom);
    Ok((loss, e.mapv(|v| v / denom)))
}

pub fn self_expression_error<T: Scalar>(e: &Array2<T>, measure: ErrorMeasure, cfg: &CimConfig) -> Result<(T, Array2<T>)> {
    match measure {
        ErrorMeasure::Cim => cim_loss_and_grad(e, cfg),
        ErrorMeasure::Mse => mse_loss_and_grad(e, cfg),
    }
}

/// `(1/2N) ||X - X_hat||_F^2` with `N` the leading dimension.
pub fn reconstruction_loss<T: Scalar>(x: &Tensor<T>, x_hat: &Tensor<T>) -> Result<T> {
    Ok(reconstruction_loss_and_grad(x, x_hat)?.0)
}

/// Loss and gradient with respect to `x_hat`.
pub fn reconstruction_loss_and_grad<T: Scalar>(x: &Tensor<T>, x_hat: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    x_hat.expect_shape("reconstruction loss", x.shape())?;
    let n = x.batch();
    if n == 0 {
        return Ok((T::zero(), Tensor::zeros(x.shape())));
    }
    let nf = T::lit(n as f64);
    let mut sum = T::zero();
    let grad: Vec<T> = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(&a, &b)| {
            let d = b - a;
            sum += d * d;
            d / nf
        })
        .collect();
    Ok((sum / (T::lit(2.0) * nf), Tensor::new(x.shape().to_vec(), grad)?))
}

fn check_cq<T>(c: &Array2<T>, q: &Array2<T>) -> Result<()> {
    let (r, cc) = c.dim();
    if r != cc {
        return Err(Error::shape("C-Q loss", "square C", format!("{r}x{cc}")));
    }
    if q.nrows() != r {
        return Err(Error::shape("C-Q loss", format!("Q with {r} rows"), q.nrows()));
    }
    Ok(())
}

/// Pairwise label disagreement `||q_i - q_j||^2 / 2`.
fn disagreement<T: Scalar>(q: &Array2<T>) -> Array2<T> {
    let gram = q.dot(&q.t());
    let half = T::lit(0.5);
    Array2::from_shape_fn(gram.dim(), |(i, j)| half * (gram[[i, i]] + gram[[j, j]]) - gram[[i, j]])
}

/// `sum_ij |c_ij| ||q_i - q_j||^2 / 2`.
pub fn cq_loss<T: Scalar>(c: &Array2<T>, q: &Array2<T>) -> Result<T> {
    Ok(cq_loss_and_grad(c, q)?.0)
}

pub fn cq_loss_and_grad<T: Scalar>(c: &Array2<T>, q: &Array2<T>) -> Result<(T, Array2<T>)> {
    check_cq(c, q)?;
    let m = disagreement(q);
    let loss = c.iter().zip(m.iter()).map(|(&cv, &mv)| cv.abs() * mv).sum();
    let grad = Array2::from_shape_fn(c.dim(), |(i, j)| sign(c[[i, j]]) * m[[i, j]]);
    Ok((loss, grad))
}

/// `sign(x)` with `sign(0) = 0`.
#[inline]
pub(crate) fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn check_logits<T>(logits: &Array2<T>, q: &Array2<T>, context: &str) -> Result<()> {
    if logits.dim() != q.dim() {
        return Err(Error::shape(context, format!("{:?}", logits.dim()), format!("{:?}", q.dim())));
    }
    Ok(())
}

/// Mean categorical cross-entropy of softmax(logits) against target rows.
pub fn cross_entropy_loss<T: Scalar>(logits: &Array2<T>, q: &Array2<T>) -> Result<T> {
    Ok(cross_entropy_loss_and_grad(logits, q)?.0)
}

pub fn cross_entropy_loss_and_grad<T: Scalar>(logits: &Array2<T>, q: &Array2<T>) -> Result<(T, Array2<T>)> {
    check_logits(logits, q, "cross-entropy loss")?;
    let n = logits.nrows();
    let mut grad = Array2::zeros(logits.raw_dim());
    if n == 0 {
        return Ok((T::zero(), grad));
    }
    let nf = T::lit(n as f64);
    let mut loss = T::zero();
    for ((row, target), mut g) in logits.axis_iter(Axis(0)).zip(q.axis_iter(Axis(0))).zip(grad.axis_iter_mut(Axis(0))) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let mass = target.sum();
        for ((&z, &t), gv) in row.iter().zip(target.iter()).zip(g.iter_mut()) {
            loss -= t * (z - lse);
            *gv = ((z - lse).exp() * mass - t) / nf;
        }
    }
    Ok((loss / nf, grad))
}

fn check_centroids<T>(logits: &Array2<T>, labels: &[usize], centroids: &Array2<T>) -> Result<()> {
    if labels.len() != logits.nrows() {
        return Err(Error::shape("center loss labels", logits.nrows(), labels.len()));
    }
    if centroids.ncols() != logits.ncols() {
        return Err(Error::shape("center loss centroids", logits.ncols(), centroids.ncols()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= centroids.nrows()) {
        return Err(Error::invalid(format!(
            "center loss label {bad} out of range for {} centroids",
            centroids.nrows()
        )));
    }
    Ok(())
}

/// `(1/N) sum_j ||y_j - mu_{label_j}||^2`.
pub fn center_loss<T: Scalar>(logits: &Array2<T>, labels: &[usize], centroids: &Array2<T>) -> Result<T> {
    Ok(center_loss_and_grad(logits, labels, centroids)?.0)
}

/// Loss and gradient with respect to the logits; centroids are constants.
pub fn center_loss_and_grad<T: Scalar>(logits: &Array2<T>, labels: &[usize], centroids: &Array2<T>) -> Result<(T, Array2<T>)> {
    check_centroids(logits, labels, centroids)?;
    let n = logits.nrows();
    let mut grad = Array2::zeros(logits.raw_dim());
    if n == 0 {
        return Ok((T::zero(), grad));
    }
    let nf = T::lit(n as f64);
    let mut loss = T::zero();
    for (j, &l) in labels.iter().enumerate() {
        let d = &logits.row(j) - &centroids.row(l);
        loss += sq_norm(d.view());
        grad.row_mut(j).assign(&(d * (T::lit(2.0) / nf)));
    }
    Ok((loss / nf, grad))
}

/// Symmetric affinity `(|C| + |C^T|) / 2`.
pub fn affinity_of<T: Scalar>(c: &Array2<T>) -> Array2<T> {
    let half = T::lit(0.5);
    Array2::from_shape_fn(c.dim(), |(i, j)| half * (c[[i, j]].abs() + c[[j, i]].abs()))
}

/// `(1/2) ||C - A||_F^2` with `A = (|C| + |C^T|) / 2`.
pub fn symmetry_loss<T: Scalar>(c: &Array2<T>) -> Result<T> {
    Ok(symmetry_loss_and_grad(c)?.0)
}

pub fn symmetry_loss_and_grad<T: Scalar>(c: &Array2<T>) -> Result<(T, Array2<T>)> {
    let (r, cc) = c.dim();
    if r != cc {
        return Err(Error::shape("symmetry loss", "square C", format!("{r}x{cc}")));
    }
    let resid = c - &affinity_of(c);
    let loss = T::lit(0.5) * resid.iter().map(|&v| v * v).sum::<T>();
    let half = T::lit(0.5);
    let grad = Array2::from_shape_fn(c.dim(), |(i, j)| {
        resid[[i, j]] - half * sign(c[[i, j]]) * (resid[[i, j]] + resid[[j, i]])
    });
    Ok((loss, grad))
}

/// Trade-off weights of the total loss. `gamma` weighs the regularizer of
/// the self-expression objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub lambda6: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 0.0,
            lambda4: 0.0,
            lambda5: 0.0,
            lambda6: 0.0,
            gamma: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("lambda5", self.lambda5),
            ("lambda6", self.lambda6),
            ("gamma", self.gamma),
        ];
        for (name, v) in all {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Values of the six weighted terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts<T> {
    pub reconstruction: T,
    /// Self-expression objective, error measure plus `gamma` times regularizer.
    pub self_expression: T,
    pub cq: T,
    pub cross_entropy: T,
    pub center: T,
    pub symmetry: T,
}

impl<T: Scalar> LossParts<T> {
    pub fn as_array(&self) -> [T; 6] {
        [
            self.reconstruction,
            self.self_expression,
            self.cq,
            self.cross_entropy,
            self.center,
            self.symmetry,
        ]
    }
}

pub fn total_loss<T: Scalar>(parts: &LossParts<T>, w: &LossWeights) -> T {
    let lambdas = [w.lambda1, w.lambda2, w.lambda3, w.lambda4, w.lambda5, w.lambda6];
    parts
        .as_array()
        .iter()
        .zip(lambdas)
        .map(|(&p, l)| T::lit(l) * p)
        .sum()
}
