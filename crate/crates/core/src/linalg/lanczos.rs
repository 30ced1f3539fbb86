//! Thick-restart Lanczos with full reorthogonalization for the smallest
//! eigenpairs of a dense symmetric matrix.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{check_square, symmetric_eigen, EigResult, SolverUsed};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LanczosOptions {
    /// Krylov basis size before each restart.
    pub basis_size: usize,
    pub restarts: usize,
    /// Converged when every wanted Ritz residual is below `tol * ||A||`.
    pub tol: f64,
    pub seed: u64,
}

impl LanczosOptions {
    pub fn for_k(k: usize) -> Self {
        LanczosOptions {
            basis_size: (20 * k).max(60),
            restarts: 30,
            tol: 1e-10,
            seed: 0x5eed,
        }
    }
}

fn random_unit<T: Scalar>(n: usize, rng: &mut ChaCha8Rng) -> Array1<T> {
    let v: Array1<T> = (0..n)
        .map(|_| T::lit(StandardNormal.sample(rng)))
        .collect();
    let norm = v.dot(&v).sqrt();
    v / norm
}

/// Two passes of classical Gram-Schmidt against `basis`. Returns the norm of
/// the remainder.
fn orthogonalize<T: Scalar>(v: &mut Array1<T>, basis: &[Array1<T>]) -> T {
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(v);
            v.scaled_add(-c, b);
        }
    }
    v.dot(v).sqrt()
}

/// Appends `v` to `basis` after orthogonalization, replacing it with a random
/// direction when it lies (numerically) inside the span. Returns false when
/// no new direction exists.
fn extend_basis<T: Scalar>(basis: &mut Vec<Array1<T>>, mut v: Array1<T>, breakdown: T, rng: &mut ChaCha8Rng) -> bool {
    let n = v.len();
    let mut norm = orthogonalize(&mut v, basis);
    if norm <= breakdown {
        v = random_unit(n, rng);
        norm = orthogonalize(&mut v, basis);
        if norm <= T::lit(1e-8) {
            return false;
        }
    }
    basis.push(v / norm);
    true
}

/// Block Lanczos with block size `k`: every eigenvalue of multiplicity up to
/// `k` gets its own starting direction, so the `k` smallest are all found.
pub fn lanczos_smallest<T: Scalar>(a: &Array2<T>, k: usize, opts: &LanczosOptions) -> Result<EigResult<T>> {
    let n = check_square(a, "lanczos")?;
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k must satisfy 1 <= k <= N, got k={k}, N={n}")));
    }
    let block = k;
    let m = opts.basis_size.max(2 * block + 2).min(n);
    let keep = (2 * k + 5).min(m.saturating_sub(block)).max(k);
    let frob = a.iter().map(|&v| v * v).sum::<T>().sqrt();
    let breakdown = T::lit(1e-12) * frob.max(T::min_positive_value());

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut basis: Vec<Array1<T>> = Vec::with_capacity(m);
    for _ in 0..block {
        let v = random_unit(n, &mut rng);
        if !extend_basis(&mut basis, v, breakdown, &mut rng) {
            break;
        }
    }
    let mut images: Vec<Array1<T>> = Vec::new();
    let mut last_residual = T::infinity();

    for _ in 0..=opts.restarts {
        // Expand the Krylov space: each new vector continues the one `block` places back.
        loop {
            while images.len() < basis.len() {
                images.push(a.dot(&basis[images.len()]));
            }
            if basis.len() >= m {
                break;
            }
            let source = images[basis.len() - block.min(basis.len())].clone();
            if !extend_basis(&mut basis, source, breakdown, &mut rng) {
                break;
            }
        }

        // Rayleigh-Ritz on the current basis.
        let dim = basis.len();
        let h = Array2::from_shape_fn((dim, dim), |(i, j)| {
            (basis[i].dot(&images[j]) + basis[j].dot(&images[i])) * T::lit(0.5)
        });
        let (theta, y) = symmetric_eigen(&h)?;
        let anorm = theta.iter().fold(T::zero(), |acc, v| acc.max(v.abs())).max(T::min_positive_value());

        let combine = |vs: &[Array1<T>], col: usize| {
            let mut out = Array1::<T>::zeros(n);
            for (j, v) in vs.iter().enumerate() {
                out.scaled_add(y[[j, col]], v);
            }
            out
        };
        let wanted = k.min(dim);
        let mut ritz = Vec::with_capacity(wanted);
        let mut converged = wanted == k;
        last_residual = T::zero();
        for i in 0..wanted {
            let x = combine(&basis, i);
            let ax = combine(&images, i);
            let res = &ax - &(&x * theta[i]);
            let rn = res.dot(&res).sqrt();
            last_residual = last_residual.max(rn);
            if rn > T::lit(opts.tol) * anorm {
                converged = false;
            }
            ritz.push(x);
        }
        if converged || dim == n {
            if dim < k {
                break;
            }
            let mut vectors = Array2::zeros((n, k));
            for (i, x) in ritz.iter().enumerate() {
                vectors.column_mut(i).assign(x);
            }
            return Ok(EigResult {
                values: theta.slice(ndarray::s![..k]).to_owned(),
                vectors,
                solver: SolverUsed::Lanczos,
            });
        }

        // Thick restart: keep the leading Ritz pairs plus the continuation
        // directions of the last block.
        let frontier: Vec<Array1<T>> = images[dim.saturating_sub(block)..]
            .iter()
            .map(|f| {
                let mut f = f.clone();
                orthogonalize(&mut f, &basis);
                f
            })
            .collect();
        let kept = keep.min(dim);
        basis = (0..kept).map(|i| combine(&basis, i)).collect();
        images = (0..kept).map(|i| combine(&images, i)).collect();
        let mut grown = false;
        for f in frontier {
            grown |= extend_basis(&mut basis, f, breakdown, &mut rng);
        }
        if !grown {
            break;
        }
    }

    Err(Error::Convergence(format!(
        "lanczos: k={k}, N={n}, basis {m}, {} restarts; worst Ritz residual {}",
        opts.restarts, last_residual
    )))
}
