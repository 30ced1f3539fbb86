//! Self-expression layer `Z -> ZC`, the robust objectives built on its
//! residual, and the two-step post-processing of `C`.
//!
//! `Z` is `features x N`, one column per sample.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bd::{bd_subgradient, DegreeMode};
use crate::checkpoint::{self, BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::linalg::truncated_svd;
use crate::losses::{self_expression_error, CimConfig, ErrorMeasure};
use crate::nn::Optimizer;
use crate::nn::UpdateRule;
use crate::Scalar;

const C_MAGIC: &[u8; 4] = b"RSCC";
const C_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    /// Sum of the `k` smallest Laplacian eigenvalues of the affinity.
    Bd,
    /// Squared Frobenius norm.
    L2,
}

impl std::fmt::Display for Regularizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regularizer::Bd => "BD",
            Regularizer::L2 => "L2",
        })
    }
}

/// The learnable `N x N` coefficient matrix with its zero diagonal enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationMatrix<T> {
    c: Array2<T>,
}

impl<T: Scalar> RepresentationMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        RepresentationMatrix { c: Array2::zeros((n, n)) }
    }

    /// Wraps `c`, zeroing its diagonal.
    pub fn from_array(mut c: Array2<T>) -> Result<Self> {
        let (r, k) = c.dim();
        if r != k {
            return Err(Error::shape("representation matrix", "square matrix", format!("{r}x{k}")));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("representation matrix".into()));
        }
        c.diag_mut().fill(T::zero());
        Ok(RepresentationMatrix { c })
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.c
    }

    pub fn into_inner(self) -> Array2<T> {
        self.c
    }

    /// Applies one optimizer update and re-imposes the zero diagonal.
    pub fn step(&mut self, opt: &mut Optimizer<T>, grad: &Array2<T>, lr: f64) -> Result<()> {
        if grad.dim() != self.c.dim() {
            return Err(Error::shape("representation update", format!("{:?}", self.c.dim()), format!("{:?}", grad.dim())));
        }
        let g = grad.as_standard_layout();
        let params = self.c.as_slice_mut().expect("owned standard layout");
        opt.step([(params, g.as_slice().expect("standard layout"))], T::lit(lr))?;
        self.c.diag_mut().fill(T::zero());
        Ok(())
    }

    /// Binary checkpoint: magic `RSCC`, version, rows, cols, row-major `f64` LE.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(checkpoint::create(path)?, C_MAGIC, C_VERSION)?;
        checkpoint::write_matrix(&mut w, &self.c)?;
        w.finish()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut r, version) = BinReader::new(checkpoint::open(path)?, C_MAGIC)?;
        if version != C_VERSION {
            return Err(Error::Checkpoint(format!("{}: unsupported version {version}", path.display())));
        }
        let c = checkpoint::read_matrix(&mut r)?;
        r.expect_end()?;
        Self::from_array(c)
    }

    /// Plain CSV, one row of `C` per line, no header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_matrix_csv(&self.c, path)
    }
}

pub(crate) fn write_matrix_csv<T: Scalar>(m: &Array2<T>, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(checkpoint::create(path)?);
    for row in m.rows() {
        w.write_record(row.iter().map(|v| format!("{:e}", v.as_f64())))
            .map_err(|e| Error::Data { path: path.into(), message: e.to_string() })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Returns `(ZC, E)` with `E = Z - ZC`.
pub fn self_express<T: Scalar>(z: &Array2<T>, c: &Array2<T>) -> Result<(Array2<T>, Array2<T>)> {
    let n = z.ncols();
    if c.dim() != (n, n) {
        return Err(Error::shape("self-expression", format!("C of {n}x{n}"), format!("{:?}", c.dim())));
    }
    let zc = z.dot(c);
    let e = z - &zc;
    Ok((zc, e))
}

/// Which objective the self-expression stage minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub measure: ErrorMeasure,
    pub regularizer: Regularizer,
    pub gamma: f64,
    pub cim: CimConfig,
    /// Number of blocks targeted by the BD regularizer.
    pub k: usize,
    #[serde(default)]
    pub degree_mode: DegreeMode,
}

#[derive(Debug, Clone)]
pub struct Objective<T> {
    /// Error-measure term alone.
    pub error: T,
    /// Regularizer value before weighting by `gamma`.
    pub regularizer: T,
    /// `error + gamma * regularizer`.
    pub loss: T,
    /// Gradient with respect to `C`, zero on the diagonal.
    pub grad_c: Array2<T>,
    /// Gradient with respect to `Z`.
    pub grad_z: Array2<T>,
}

/// Error measure of `Z - ZC` plus `gamma` times the chosen regularizer.
pub fn robust_objective<T: Scalar>(z: &Array2<T>, c: &Array2<T>, spec: &ObjectiveSpec) -> Result<Objective<T>> {
    if !(spec.gamma >= 0.0) {
        return Err(Error::invalid(format!("gamma must be >= 0, got {}", spec.gamma)));
    }
    let (_, e) = self_express(z, c)?;
    let (error, g_e) = self_expression_error(&e, spec.measure, &spec.cim)?;
    // E = Z - ZC, so dE/dC contributes -Z^T G and dE/dZ contributes G (I - C^T).
    let mut grad_c = -z.t().dot(&g_e);
    let grad_z = &g_e - &g_e.dot(&c.t());
    let gamma = T::lit(spec.gamma);
    let regularizer = match spec.regularizer {
        Regularizer::L2 => {
            grad_c.zip_mut_with(c, |g, &v| *g += gamma * T::lit(2.0) * v);
            c.iter().map(|&v| v * v).sum()
        }
        Regularizer::Bd => {
            if spec.gamma == 0.0 {
                T::zero()
            } else {
                let (value, g) = bd_subgradient(c, spec.k, spec.degree_mode)?;
                grad_c.zip_mut_with(&g, |a, &b| *a += gamma * b);
                value
            }
        }
    };
    grad_c.diag_mut().fill(T::zero());
    Ok(Objective {
        error,
        regularizer,
        loss: error + gamma * regularizer,
        grad_c,
        grad_z,
    })
}

/// Settings for fitting `C` directly to fixed features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub iterations: usize,
    pub lr: f64,
    #[serde(default)]
    pub rule: UpdateRule,
}

/// Minimizes [`robust_objective`] over `C` with `Z` held fixed, starting from zero.
pub fn fit_representation<T: Scalar>(z: &Array2<T>, spec: &ObjectiveSpec, opts: &FitOptions) -> Result<RepresentationMatrix<T>> {
    let mut c = RepresentationMatrix::zeros(z.ncols());
    let mut opt = Optimizer::new(opts.rule);
    for _ in 0..opts.iterations {
        let obj = robust_objective(z, c.matrix(), spec)?;
        c.step(&mut opt, &obj.grad_c, opts.lr)?;
    }
    Ok(c)
}

/// Two-step clean-up of `C` before spectral clustering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostprocessConfig {
    /// Fraction of each row's magnitude mass to keep, in `(0, 1]`.
    pub keep_ratio: f64,
    /// Number of singular triplets kept in the reconstruction.
    pub subspace_dim: usize,
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return Err(Error::invalid(format!("keep_ratio must lie in (0, 1], got {}", self.keep_ratio)));
        }
        if self.subspace_dim == 0 {
            return Err(Error::invalid("subspace_dim must be >= 1"));
        }
        Ok(())
    }
}

/// Keeps, per row, the largest-magnitude entries until their magnitude sum
/// reaches `keep_ratio` of the row total. Ties go to the lower column index.
/// All-zero rows pass through unchanged.
pub fn threshold_rows<T: Scalar>(c: &Array2<T>, keep_ratio: f64) -> Array2<T> {
    let mut out = Array2::zeros(c.raw_dim());
    let ratio = T::lit(keep_ratio);
    let mut order: Vec<usize> = (0..c.ncols()).collect();
    for (i, row) in c.rows().into_iter().enumerate() {
        order.sort_by(|&a, &b| row[b].abs().as_f64().total_cmp(&row[a].abs().as_f64()).then(a.cmp(&b)));
        // Summing in sorted order makes the final prefix equal the total exactly.
        let total: T = order.iter().map(|&j| row[j].abs()).sum();
        let target = ratio * total;
        let mut acc = T::zero();
        for &j in &order {
            if acc >= target && total > T::zero() {
                break;
            }
            acc += row[j].abs();
            out[[i, j]] = row[j];
        }
    }
    out
}

pub fn postprocess_c<T: Scalar>(c: &Array2<T>, cfg: &PostprocessConfig) -> Result<Array2<T>> {
    cfg.validate()?;
    let (r, k) = c.dim();
    if r != k {
        return Err(Error::shape("post-processing", "square matrix", format!("{r}x{k}")));
    }
    truncated_svd(&threshold_rows(c, cfg.keep_ratio), cfg.subspace_dim)
}

/// Share of `|C|` mass falling on pairs whose labels differ.
pub fn off_block_mass<T: Scalar>(c: &Array2<T>, labels: &[usize]) -> f64 {
    let mut off = 0.0;
    let mut total = 0.0;
    for ((i, j), &v) in c.indexed_iter() {
        let m = v.abs().as_f64();
        total += m;
        if labels[i] != labels[j] {
            off += m;
        }
    }
    if total > 0.0 {
        off / total
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{fd_gradient, relative_error, FD_STEP};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    fn spec(measure: ErrorMeasure, regularizer: Regularizer) -> ObjectiveSpec {
        ObjectiveSpec {
            measure,
            regularizer,
            gamma: 0.3,
            cim: CimConfig::new(1.5),
            k: 2,
            degree_mode: DegreeMode::Full,
        }
    }

    #[test]
    fn zero_c_leaves_residual_equal_to_z() {
        let z = random(3, 4, 1);
        let (zc, e) = self_express(&z, &Array2::zeros((4, 4))).unwrap();
        assert_eq!(e, z);
        assert!(zc.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_column_is_self_represented() {
        let mut z = random(3, 3, 2);
        let col = z.column(1).to_owned();
        z.column_mut(0).assign(&col);
        let mut c = Array2::zeros((3, 3));
        c[[1, 0]] = 1.0;
        let (_, e) = self_express(&z, &c).unwrap();
        assert!(e.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_identity() {
        let z = random(5, 6, 3);
        let c = random(6, 6, 4);
        let (zc, e) = self_express(&z, &c).unwrap();
        assert!((&e + &zc - &z).iter().all(|v| v.abs() < 1e-12));
        assert!(self_express(&z, &random(5, 5, 0)).is_err());
    }

    #[test]
    fn l2_objective_is_zero_at_origin() {
        let obj = robust_objective(&Array2::<f64>::zeros((3, 4)), &Array2::zeros((4, 4)), &spec(ErrorMeasure::Cim, Regularizer::L2)).unwrap();
        assert_eq!(obj.loss, 0.0);
    }

    #[test]
    fn bd_objective_at_origin_counts_isolated_nodes() {
        let s = spec(ErrorMeasure::Cim, Regularizer::Bd);
        let obj = robust_objective(&Array2::<f64>::zeros((3, 4)), &Array2::zeros((4, 4)), &s).unwrap();
        assert_eq!(obj.error, 0.0);
        assert!((obj.loss - s.gamma * s.k as f64).abs() < 1e-12);
        assert!(obj.grad_c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bd_objective_reduces_to_error_on_block_diagonal_c() {
        let z = random(3, 4, 5);
        let c = array![[0.0, 0.5, 0.0, 0.0], [0.5, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.2], [0.0, 0.0, 0.7, 0.0]];
        let s = spec(ErrorMeasure::Cim, Regularizer::Bd);
        let obj = robust_objective(&z, &c, &s).unwrap();
        let (_, e) = self_express(&z, &c).unwrap();
        let (err, _) = self_expression_error(&e, ErrorMeasure::Cim, &s.cim).unwrap();
        assert!((obj.loss - err).abs() < 1e-8);
    }

    fn check_fd(measure: ErrorMeasure, regularizer: Regularizer, tol: f64) {
        let z = random(4, 6, 6);
        let mut c = random(6, 6, 7);
        c.diag_mut().fill(0.0);
        let s = spec(measure, regularizer);
        let obj = robust_objective(&z, &c, &s).unwrap();
        let mask = |x: &[f64]| {
            let mut m = Array2::from_shape_vec((6, 6), x.to_vec()).unwrap();
            m.diag_mut().fill(0.0);
            m
        };
        let numeric_c = fd_gradient(|x| robust_objective(&z, &mask(x), &s).unwrap().loss, c.as_slice().unwrap(), FD_STEP);
        let err_c = relative_error(obj.grad_c.as_slice().unwrap(), &numeric_c);
        assert!(err_c < tol, "{measure}/{regularizer} C: {err_c}");
        let numeric_z = fd_gradient(
            |x| robust_objective(&Array2::from_shape_vec((4, 6), x.to_vec()).unwrap(), &c, &s).unwrap().loss,
            z.as_slice().unwrap(),
            FD_STEP,
        );
        let err_z = relative_error(obj.grad_z.as_slice().unwrap(), &numeric_z);
        assert!(err_z < tol, "{measure}/{regularizer} Z: {err_z}");
    }

    #[test]
    fn objective_gradients_match_fd() {
        check_fd(ErrorMeasure::Cim, Regularizer::L2, 1e-4);
        check_fd(ErrorMeasure::Mse, Regularizer::L2, 1e-4);
        check_fd(ErrorMeasure::Cim, Regularizer::Bd, 1e-3);
    }

    #[test]
    fn diagonal_stays_zero_through_updates() {
        let z = random(4, 8, 8);
        let s = spec(ErrorMeasure::Cim, Regularizer::Bd);
        let mut c = RepresentationMatrix::zeros(8);
        let mut opt = Optimizer::new(UpdateRule::default());
        for _ in 0..50 {
            let obj = robust_objective(&z, c.matrix(), &s).unwrap();
            c.step(&mut opt, &obj.grad_c, 1e-2).unwrap();
        }
        assert!(c.matrix().diag().iter().all(|&v| v == 0.0));
        assert!(c.matrix().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn threshold_keeps_shortest_prefix() {
        let c = array![[3.0, 1.0, 0.5]];
        assert_eq!(threshold_rows(&c, 0.7), array![[3.0, 1.0, 0.0]]);
        let c = random(5, 5, 9);
        assert_eq!(threshold_rows(&c, 1.0), c);
        let zero = Array2::<f64>::zeros((2, 2));
        assert_eq!(threshold_rows(&zero, 0.5), zero);
    }

    #[test]
    fn threshold_ties_prefer_lower_index() {
        let c = array![[1.0, -1.0, 1.0, 1.0]];
        assert_eq!(threshold_rows(&c, 0.5), array![[1.0, -1.0, 0.0, 0.0]]);
    }

    #[test]
    fn postprocess_rank_and_mass() {
        let c = random(8, 8, 10);
        let t = threshold_rows(&c, 0.6);
        for (a, b) in c.rows().into_iter().zip(t.rows()) {
            assert!(b.iter().map(|v| v.abs()).sum::<f64>() <= a.iter().map(|v| v.abs()).sum::<f64>());
        }
        let pp = postprocess_c(&c, &PostprocessConfig { keep_ratio: 0.6, subspace_dim: 3 }).unwrap();
        let s = crate::linalg::singular_values(&pp).unwrap();
        assert!(s[3..].iter().all(|&v| v < 1e-10 * s[0]));
    }

    #[test]
    fn rank_one_with_unit_dim_is_identity_after_threshold() {
        let u = array![1.0, 2.0, -1.0];
        let v = array![0.5, -0.3, 0.8];
        let c = Array2::from_shape_fn((3, 3), |(i, j)| u[i] * v[j]);
        let pp = postprocess_c(&c, &PostprocessConfig { keep_ratio: 1.0, subspace_dim: 1 }).unwrap();
        assert!((&pp - &c).iter().all(|v: &f64| v.abs() < 1e-10));
    }

    #[test]
    fn rejects_bad_postprocess_config() {
        let c = Array2::<f64>::zeros((2, 2));
        assert!(postprocess_c(&c, &PostprocessConfig { keep_ratio: 0.0, subspace_dim: 1 }).is_err());
        assert!(postprocess_c(&c, &PostprocessConfig { keep_ratio: 0.5, subspace_dim: 0 }).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = RepresentationMatrix::from_array(random(5, 5, 11)).unwrap();
        let path = dir.path().join("c.bin");
        c.save(&path).unwrap();
        assert_eq!(RepresentationMatrix::<f64>::load(&path).unwrap(), c);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"RSCC");
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(RepresentationMatrix::<f64>::load(&path).is_err());
        let csv_path = dir.path().join("c.csv");
        c.write_csv(&csv_path).unwrap();
        assert_eq!(std::fs::read_to_string(&csv_path).unwrap().lines().count(), 5);
    }

    #[test]
    fn off_block_mass_counts_cross_pairs() {
        let c = array![[0.0, 1.0, 3.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        assert!((off_block_mass(&c, &[0, 0, 1]) - 0.6).abs() < 1e-12);
    }
}
