//! Dense symmetric eigensolvers and truncated SVD.
//!
//! The dense routes delegate to `nalgebra` in double precision; the Lanczos
//! route in [`lanczos`] is self-contained and generic over the scalar type.

pub mod lanczos;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::Scalar;

pub use lanczos::{lanczos_smallest, LanczosOptions};

/// Size at or below which [`EigMethod::Auto`] uses the dense solver.
pub const DENSE_CUTOFF: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigMethod {
    /// Dense for `N <= 512`, Lanczos (with dense fallback) above.
    #[default]
    Auto,
    Lanczos,
    Dense,
}

/// Which solver actually produced an [`EigResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverUsed {
    Dense,
    Lanczos,
    /// Lanczos exhausted its budget and the dense solver took over.
    DenseFallback,
}

/// The `k` smallest eigenpairs of a symmetric matrix, ascending.
#[derive(Debug, Clone)]
pub struct EigResult<T> {
    pub values: Array1<T>,
    /// `N x k`, orthonormal columns.
    pub vectors: Array2<T>,
    pub solver: SolverUsed,
}

impl<T: Scalar> EigResult<T> {
    /// Largest `||A v_i - lambda_i v_i||` over the returned pairs.
    pub fn max_residual(&self, a: &Array2<T>) -> T {
        let av = a.dot(&self.vectors);
        let mut worst = T::zero();
        for (i, &lam) in self.values.iter().enumerate() {
            let r = &av.column(i) - &(&self.vectors.column(i) * lam);
            worst = worst.max(r.dot(&r).sqrt());
        }
        worst
    }
}

pub(crate) fn to_dmatrix<T: Scalar>(a: &Array2<T>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]].as_f64())
}

pub(crate) fn check_square<T>(a: &Array2<T>, context: &str) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::shape(context, "square matrix", format!("{r}x{c}")));
    }
    Ok(r)
}

/// Largest absolute entry of `A - A^T`.
pub fn asymmetry<T: Scalar>(a: &Array2<T>) -> T {
    let mut worst = T::zero();
    for ((i, j), &v) in a.indexed_iter() {
        worst = worst.max((v - a[[j, i]]).abs());
    }
    worst
}

/// Full eigendecomposition of a symmetric matrix, eigenvalues ascending.
pub fn symmetric_eigen<T: Scalar>(a: &Array2<T>) -> Result<(Array1<T>, Array2<T>)> {
    let n = check_square(a, "symmetric eigensolver")?;
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("symmetric eigensolver input".into()));
    }
    let m = to_dmatrix(a);
    let m = (&m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::try_new(m, f64::EPSILON, 0)
        .ok_or_else(|| Error::Convergence(format!("dense symmetric eigensolver failed on {n}x{n} input")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| T::lit(eig.eigenvalues[i])).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| T::lit(eig.eigenvectors[(r, order[c])]));
    Ok((values, vectors))
}

/// Rank-`rank` reconstruction `U_r S_r V_r^T` from the largest singular triplets.
pub fn truncated_svd<T: Scalar>(a: &Array2<T>, rank: usize) -> Result<Array2<T>> {
    let (r, c) = a.dim();
    if r == 0 || c == 0 {
        return Ok(a.clone());
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SVD input".into()));
    }
    let svd = nalgebra::SVD::try_new(to_dmatrix(a), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Convergence(format!("SVD failed on {r}x{c} input")))?;
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]).then(i.cmp(&j)));
    let mut out = DMatrix::<f64>::zeros(r, c);
    for &i in order.iter().take(rank) {
        out += u.column(i) * vt.row(i) * svd.singular_values[i];
    }
    Ok(Array2::from_shape_fn((r, c), |(i, j)| T::lit(out[(i, j)])))
}

/// Singular values, descending.
pub fn singular_values<T: Scalar>(a: &Array2<T>) -> Result<Vec<f64>> {
    let svd = nalgebra::SVD::try_new(to_dmatrix(a), false, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::Convergence("SVD failed".into()))?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

fn dense_smallest<T: Scalar>(a: &Array2<T>, k: usize, solver: SolverUsed) -> Result<EigResult<T>> {
    let (values, vectors) = symmetric_eigen(a)?;
    Ok(EigResult {
        values: values.slice(ndarray::s![..k]).to_owned(),
        vectors: vectors.slice(ndarray::s![.., ..k]).to_owned(),
        solver,
    })
}

/// The `k` smallest eigenpairs of symmetric `a`.
pub fn k_smallest_eigs<T: Scalar>(a: &Array2<T>, k: usize, method: EigMethod) -> Result<EigResult<T>> {
    let n = check_square(a, "k_smallest_eigs")?;
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k must satisfy 1 <= k <= N, got k={k}, N={n}")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k_smallest_eigs input".into()));
    }
    let use_lanczos = match method {
        EigMethod::Dense => false,
        EigMethod::Lanczos => true,
        EigMethod::Auto => n > DENSE_CUTOFF,
    };
    let result = if use_lanczos {
        match lanczos_smallest(a, k, &LanczosOptions::for_k(k)) {
            Ok(r) => r,
            Err(Error::Convergence(msg)) => {
                log::warn!("lanczos fell back to dense solver: {msg}");
                dense_smallest(a, k, SolverUsed::DenseFallback)?
            }
            Err(e) => return Err(e),
        }
    } else {
        dense_smallest(a, k, SolverUsed::Dense)?
    };
    let norm = a.iter().map(|&v| v * v).sum::<T>().sqrt();
    let residual = result.max_residual(a);
    if residual > T::lit(1e-6) * norm.max(T::min_positive_value()) {
        return Err(Error::Convergence(format!(
            "eigenpair residual {residual} exceeds tolerance (solver {:?})",
            result.solver
        )));
    }
    Ok(result)
}

/// Normalizes each row to unit length; rows with norm below `eps` are zeroed.
pub fn normalize_rows<T: Scalar>(m: &mut Array2<T>, eps: T) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        if norm > eps {
            row.mapv_inplace(|v| v / norm);
        } else {
            row.fill(T::zero());
        }
    }
}
