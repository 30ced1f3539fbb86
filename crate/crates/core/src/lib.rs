//! Robust self-supervised convolutional subspace clustering.
//!
//! The pipeline learns a self-expressive representation matrix `C` over the
//! latent codes of a convolutional autoencoder, scores the self-expression
//! residual with the correntropy-induced metric, regularizes `C` toward
//! block-diagonal structure, refines pseudo-labels with spectral clustering
//! and trains a softmax head that classifies unseen samples.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the element type. The CLI uses `f64`.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bd;
pub mod classifier;
pub mod config;
pub(crate) mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod selfexpr;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
