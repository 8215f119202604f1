//! L1-SVM optimality and ensemble properties.

use mrnr::model::{bag, combine, svm_objective, train_region_svm, train_region_svm_traced, RegionClassifier, SvmOptions};
use mrnr::FeatureLayout;
use proptest::prelude::*;

fn data(n_max: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<i8>)> {
    (1..=n_max, 4usize..14).prop_flat_map(|(n, rows)| {
        (
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, n), rows),
            prop::collection::vec(prop::bool::ANY, rows),
        )
            .prop_map(|(x, flags)| {
                let mut y: Vec<i8> = flags.iter().map(|&b| if b { 1 } else { -1 }).collect();
                y[0] = 1;
                y[1] = -1;
                (x, y)
            })
    })
}

/// Minimum of the objective over a regular grid on `[-h, h]^n`.
fn grid_min(x: &[Vec<f64>], y: &[i8], c: f64, h: f64, k: usize) -> f64 {
    let n = x[0].len();
    let step = 2.0 * h / (k - 1) as f64;
    let mut idx = vec![0; n];
    let mut best = f64::INFINITY;
    loop {
        let w: Vec<f64> = idx.iter().map(|&i| -h + i as f64 * step).collect();
        best = best.min(svm_objective(x, y, &w, c));
        let mut d = 0;
        while d < n {
            idx[d] += 1;
            if idx[d] < k {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == n {
            return best;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimum_is_below_every_grid_point((x, y) in data(2), c in 0.1f64..3.0) {
        let opts = SvmOptions::with_c(c);
        let clf = train_region_svm(0, &x, &y, &opts).unwrap();
        let obj = svm_objective(&x, &y, &clf.weights, c);
        prop_assert!(obj <= grid_min(&x, &y, c, 3.0, 61) + 1e-9);
        // Random perturbations never improve on the optimum.
        for d in [[0.01, 0.0], [-0.01, 0.0], [0.0, 0.01], [0.0, -0.01], [0.3, -0.2]] {
            let w: Vec<f64> = clf.weights.iter().zip(d).map(|(a, b)| a + b).collect();
            prop_assert!(obj <= svm_objective(&x, &y, &w, c) + 1e-9);
        }
    }

    #[test]
    fn trace_is_non_increasing((x, y) in data(5), c in 0.1f64..5.0) {
        let (clf, trace) = train_region_svm_traced(0, &x, &y, &SvmOptions::with_c(c)).unwrap();
        for w in trace.objective.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        let last = *trace.objective.last().unwrap();
        let obj = svm_objective(&x, &y, &clf.weights, c);
        prop_assert!((last - obj).abs() <= 1e-9 * obj.max(1.0));
    }

    #[test]
    fn label_flip_negates_at_equal_objective((x, y) in data(4), c in 0.1f64..3.0) {
        let opts = SvmOptions::with_c(c);
        let a = train_region_svm(0, &x, &y, &opts).unwrap();
        let neg: Vec<i8> = y.iter().map(|v| -v).collect();
        let b = train_region_svm(0, &x, &neg, &opts).unwrap();
        let oa = svm_objective(&x, &y, &a.weights, c);
        let ob = svm_objective(&x, &neg, &b.weights, c);
        prop_assert!((oa - ob).abs() <= 1e-9 * oa.max(1.0));
        // -w_a is feasible for the flipped problem with the same objective.
        let minus: Vec<f64> = a.weights.iter().map(|v| -v).collect();
        prop_assert!((svm_objective(&x, &neg, &minus, c) - oa).abs() <= 1e-9 * oa.max(1.0));
    }

    #[test]
    fn duplicating_rows_with_half_cost_keeps_the_optimum((x, y) in data(3), c in 0.2f64..4.0) {
        let a = train_region_svm(0, &x, &y, &SvmOptions::with_c(c)).unwrap();
        let x2: Vec<Vec<f64>> = x.iter().chain(&x).cloned().collect();
        let y2: Vec<i8> = y.iter().chain(&y).cloned().collect();
        let b = train_region_svm(0, &x2, &y2, &SvmOptions::with_c(c / 2.0)).unwrap();
        let oa = svm_objective(&x, &y, &a.weights, c);
        let ob = svm_objective(&x2, &y2, &b.weights, c / 2.0);
        prop_assert!((oa - ob).abs() <= 1e-9 * oa.max(1.0));
    }

    #[test]
    fn small_cost_gives_sparse_zero_weights((x, y) in data(5)) {
        // With C·Σ|x| < 1 every non-zero weight costs more than it saves.
        let total: f64 = x.iter().flatten().map(|v| v.abs()).sum();
        let c = 0.5 / total.max(1e-9);
        let clf = train_region_svm(0, &x, &y, &SvmOptions::with_c(c)).unwrap();
        prop_assert!(clf.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn bagging_label_is_scale_invariant(ws in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 1..5), row in prop::collection::vec(-2.0f64..2.0, 12), s in 0.01f64..100.0) {
        let layout = FeatureLayout { regions: (0..4).map(|r| (r + 1, 3 * r, 3)).collect() };
        let clfs: Vec<RegionClassifier> = ws.iter().enumerate().map(|(k, w)| RegionClassifier { region_id: k + 1, weights: w.clone(), c: 1.0, bias: false }).collect();
        let scaled: Vec<RegionClassifier> = clfs.iter().map(|c| RegionClassifier { weights: c.weights.iter().map(|v| s * v).collect(), ..c.clone() }).collect();
        let (a, la) = bag(&clfs, &layout, &row).unwrap();
        let (b, lb) = bag(&scaled, &layout, &row).unwrap();
        prop_assert!((b - s * a).abs() <= 1e-9 * (1.0 + b.abs()));
        if a != 0.0 {
            prop_assert_eq!(la, lb);
        }
        // The combined score is the mean decision.
        let decisions: Vec<f64> = clfs.iter().map(|c| (0..3).map(|i| c.weights[i] * row[3 * (c.region_id - 1) + i]).sum()).collect();
        prop_assert!((combine(&decisions).unwrap().0 - a).abs() < 1e-12);
    }
}
