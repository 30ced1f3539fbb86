//! Datasets, loaders, synthetic generators and fold planning.
//!
//! Ground-truth labels live only on [`Dataset`]. Training code receives an
//! [`Unlabeled`] view, which carries samples and the cluster count and
//! nothing else.

mod csvmat;
mod folds;
mod idx;
mod images;
mod synth;

pub use csvmat::{load_csv_dataset, load_csv_matrix, write_csv_dataset};
pub use folds::{stratified_folds, Fold, FoldPlan, FoldRegime};
pub use idx::{load_idx, load_idx_labels, load_idx_raw, load_mnist, IdxArray};
pub use images::{list_images, load_image_dir, load_image_files, write_image_dir, IMAGE_EXTENSIONS};
pub use synth::{synth_images, synth_subspaces, ImageParams, SubspaceParams};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    /// `[N, ...]`, one leading slice per sample.
    pub samples: Tensor<T>,
    /// Ground truth in `[0, k)`, used only for evaluation and stratification.
    pub labels: Vec<usize>,
    pub k: usize,
    /// Presumed subspace dimension per class.
    pub d: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(samples: Tensor<T>, labels: Vec<usize>, k: usize, d: usize) -> Result<Self> {
        if samples.batch() != labels.len() {
            return Err(Error::shape("dataset labels", samples.batch(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("label {bad} out of range for k={k}")));
        }
        if d == 0 {
            return Err(Error::invalid("subspace dimension d must be >= 1"));
        }
        Ok(Dataset { samples, labels, k, d })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset<T> {
        Dataset {
            samples: self.samples.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            k: self.k,
            d: self.d,
        }
    }

    pub fn unlabeled(&self) -> Unlabeled<'_, T> {
        Unlabeled {
            samples: &self.samples,
            k: self.k,
        }
    }
}

/// Label-free view handed to training code.
#[derive(Debug, Clone, Copy)]
pub struct Unlabeled<'a, T> {
    pub samples: &'a Tensor<T>,
    pub k: usize,
}

impl<'a, T: Scalar> Unlabeled<'a, T> {
    pub fn new(samples: &'a Tensor<T>, k: usize) -> Self {
        Unlabeled { samples, k }
    }

    pub fn len(&self) -> usize {
        self.samples.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
