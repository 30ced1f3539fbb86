use ndarray::Array2;
use proptest::prelude::*;

use rscn::bd::bd_norm;
use rscn::metrics::clustering_accuracy;
use rscn::selfexpr::threshold_rows;

fn labels_and_perm(max_k: usize) -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>, Vec<usize>)> {
    (1..=max_k).prop_flat_map(|k| {
        let n = 1..40usize;
        n.prop_flat_map(move |n| {
            (
                Just(k),
                prop::collection::vec(0..k, n),
                prop::collection::vec(0..k, n),
                Just((0..k).collect::<Vec<_>>()).prop_shuffle(),
            )
        })
    })
}

fn square(max_n: usize) -> impl Strategy<Value = Array2<f64>> {
    (3..=max_n).prop_flat_map(|n| {
        prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| {
            let mut c = Array2::from_shape_vec((n, n), v).unwrap();
            c.diag_mut().fill(0.0);
            c
        })
    })
}

proptest! {
    #[test]
    fn accuracy_ignores_cluster_names((k, pred, truth, perm) in labels_and_perm(6)) {
        let renamed: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
        let a = clustering_accuracy(&pred, &truth, k).unwrap();
        let b = clustering_accuracy(&renamed, &truth, k).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(clustering_accuracy(&truth, &truth, k).unwrap(), 1.0);
    }

    #[test]
    fn bd_norm_ignores_sample_order((c, perm) in square(12).prop_flat_map(|c| {
        let n = c.nrows();
        (Just(c), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
    })) {
        let n = c.nrows();
        let permuted = Array2::from_shape_fn((n, n), |(i, j)| c[[perm[i], perm[j]]]);
        for k in 1..=3.min(n) {
            let a = bd_norm(&c, k).unwrap();
            let b = bd_norm(&permuted, k).unwrap();
            prop_assert!((a - b).abs() < 1e-9, "k={} {} vs {}", k, a, b);
            prop_assert!(a >= -1e-12 && a <= k as f64 * 2.0 + 1e-9);
        }
    }

    #[test]
    fn thresholding_keeps_the_requested_mass(c in square(10), keep in 0.05..1.0f64) {
        let t = threshold_rows(&c, keep);
        for (row, kept) in c.rows().into_iter().zip(t.rows()) {
            let total: f64 = row.iter().map(|v| v.abs()).sum();
            let mass: f64 = kept.iter().map(|v| v.abs()).sum();
            prop_assert!(mass >= keep * total - 1e-12);
            for (a, b) in row.iter().zip(kept.iter()) {
                prop_assert!(*b == 0.0 || a == b);
            }
        }
    }
}
