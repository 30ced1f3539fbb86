//! Synthetic unions of subspaces, as flat vectors or as small images.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubspaceParams {
    pub k: usize,
    pub d_sub: usize,
    pub ambient_dim: usize,
    pub n_per_class: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Fraction of all entries replaced by impulsive values.
    #[serde(default)]
    pub outlier_frac: f64,
    #[serde(default)]
    pub outlier_mag: f64,
}

impl SubspaceParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        if self.d_sub == 0 || self.d_sub >= self.ambient_dim {
            return Err(Error::invalid(format!(
                "need 1 <= d_sub < ambient_dim, got d_sub={} ambient_dim={}",
                self.d_sub, self.ambient_dim
            )));
        }
        if self.n_per_class <= self.d_sub {
            return Err(Error::invalid(format!(
                "n_per_class ({}) must exceed d_sub ({})",
                self.n_per_class, self.d_sub
            )));
        }
        if !(0.0..=1.0).contains(&self.outlier_frac) {
            return Err(Error::invalid(format!("outlier_frac must lie in [0, 1], got {}", self.outlier_frac)));
        }
        if !(self.noise_sigma >= 0.0) || !(self.outlier_mag >= 0.0) {
            return Err(Error::invalid("noise_sigma and outlier_mag must be >= 0"));
        }
        Ok(())
    }
}

fn orthonormal_basis(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

/// Replaces exactly `round(frac * len)` distinct entries with values drawn
/// uniformly from `[-mag, mag]`.
fn corrupt<T: Scalar>(data: &mut [T], frac: f64, mag: f64, rng: &mut ChaCha8Rng) {
    let count = (frac * data.len() as f64).round() as usize;
    if count == 0 {
        return;
    }
    for i in sample(rng, data.len(), count.min(data.len())).into_vec() {
        data[i] = T::lit(rng.random_range(-mag..=mag));
    }
}

/// Class `i` draws `B_i w` with `B_i` a random orthonormal basis and
/// `w ~ N(0, I)`. Samples are `[N, ambient_dim]`, class-major.
pub fn synth_subspaces<T: Scalar>(p: &SubspaceParams, seed: u64) -> Result<Dataset<T>> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = p.k * p.n_per_class;
    let mut data = Vec::with_capacity(n * p.ambient_dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..p.k {
        let basis = orthonormal_basis(p.ambient_dim, p.d_sub, &mut rng);
        for _ in 0..p.n_per_class {
            let w = DMatrix::from_fn(p.d_sub, 1, |_, _| StandardNormal.sample(&mut rng));
            let x = &basis * w;
            for v in x.iter() {
                let noise: f64 = if p.noise_sigma > 0.0 {
                    p.noise_sigma * Distribution::<f64>::sample(&StandardNormal, &mut rng)
                } else {
                    0.0
                };
                data.push(T::lit(v + noise));
            }
            labels.push(class);
        }
    }
    corrupt(&mut data, p.outlier_frac, p.outlier_mag, &mut rng);
    Dataset::new(Tensor::new(vec![n, p.ambient_dim], data)?, labels, p.k, p.d_sub)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageParams {
    pub k: usize,
    pub per_class: usize,
    /// Side length of the square images.
    pub size: usize,
    /// Basis images per class (sine/cosine pairs, rounded up to even).
    pub d_sub: usize,
    #[serde(default)]
    pub noise_sigma: f64,
}

/// Grayscale `[N, 1, size, size]` images around mid-gray. Each class spans
/// sinusoidal gratings at its own orientation, so the classes form a union
/// of low-dimensional subspaces in pixel space. Coefficients are drawn
/// around 1, so each class occupies a cone inside its subspace.
pub fn synth_images<T: Scalar>(p: &ImageParams, seed: u64) -> Result<Dataset<T>> {
    if p.k == 0 || p.per_class == 0 || p.size < 2 || p.d_sub == 0 {
        return Err(Error::invalid("image generator needs k, per_class, d_sub >= 1 and size >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = p.d_sub.div_ceil(2);
    let npix = p.size * p.size;
    let mut bases: Vec<Vec<Vec<f64>>> = Vec::with_capacity(p.k);
    for class in 0..p.k {
        let theta = PI * class as f64 / p.k as f64;
        let (c, s) = (theta.cos(), theta.sin());
        let mut class_bases = Vec::with_capacity(2 * pairs);
        for j in 0..pairs {
            let freq = 1.5 + j as f64;
            let phase = |y: usize, x: usize| 2.0 * PI * freq * (x as f64 * c + y as f64 * s) / p.size as f64;
            class_bases.push((0..npix).map(|i| phase(i / p.size, i % p.size).sin()).collect());
            class_bases.push((0..npix).map(|i| phase(i / p.size, i % p.size).cos()).collect());
        }
        bases.push(class_bases);
    }
    let amp = 0.35 / (2 * pairs) as f64;
    let mut data = Vec::with_capacity(p.k * p.per_class * npix);
    let mut labels = Vec::with_capacity(p.k * p.per_class);
    for (class, class_bases) in bases.iter().enumerate() {
        for _ in 0..p.per_class {
            let mut img = vec![0.5; npix];
            for b in class_bases {
                let w = 1.0 + 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                for (v, &bv) in img.iter_mut().zip(b) {
                    *v += amp * w * bv;
                }
            }
            if p.noise_sigma > 0.0 {
                for v in img.iter_mut() {
                    *v += p.noise_sigma * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                }
            }
            data.extend(img.into_iter().map(T::lit));
            labels.push(class);
        }
    }
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, 1, p.size, p.size], data)?, labels, p.k, 2 * pairs)
}
