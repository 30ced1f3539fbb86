//! Stratified fold planning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum FoldRegime {
    /// Train on one fold, test on all the others.
    #[default]
    OneVsRest,
    /// Split each fold into train and test by `train_fraction`, per class.
    WithinFold { train_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub num_folds: usize,
    pub folds: Vec<Fold>,
    pub seed: u64,
    pub regime: FoldRegime,
}

/// Deals each class's shuffled indices round-robin over the folds, so
/// per-class counts differ by at most one between folds.
fn assign_folds(labels: &[usize], num_folds: usize, seed: u64) -> Result<Vec<Vec<Vec<usize>>>> {
    if num_folds == 0 {
        return Err(Error::invalid("num_folds must be >= 1"));
    }
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // folds[f][class] = indices
    let mut folds = vec![vec![Vec::new(); k]; num_folds];
    let mut offset = 0;
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < num_folds {
            return Err(Error::invalid(format!(
                "class {class} has {} samples, fewer than {num_folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (j, &i) in members.iter().enumerate() {
            folds[(offset + j) % num_folds][class].push(i);
        }
        // Rotating the start keeps total fold sizes balanced too.
        offset = (offset + members.len()) % num_folds;
    }
    Ok(folds)
}

pub fn stratified_folds(labels: &[usize], num_folds: usize, seed: u64, regime: FoldRegime) -> Result<FoldPlan> {
    let per_class = assign_folds(labels, num_folds, seed)?;
    let mut folds = Vec::with_capacity(num_folds);
    for f in 0..num_folds {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        match regime {
            FoldRegime::OneVsRest => {
                for (g, classes) in per_class.iter().enumerate() {
                    let target = if g == f { &mut train } else { &mut test };
                    classes.iter().for_each(|c| target.extend(c));
                }
            }
            FoldRegime::WithinFold { train_fraction } => {
                if !(train_fraction > 0.0 && train_fraction < 1.0) {
                    return Err(Error::invalid(format!("train_fraction must lie in (0, 1), got {train_fraction}")));
                }
                for members in &per_class[f] {
                    let cut = (train_fraction * members.len() as f64).round() as usize;
                    train.extend(&members[..cut]);
                    test.extend(&members[cut..]);
                }
            }
        }
        train.sort_unstable();
        test.sort_unstable();
        folds.push(Fold { train, test });
    }
    Ok(FoldPlan {
        num_folds,
        folds,
        seed,
        regime,
    })
}
