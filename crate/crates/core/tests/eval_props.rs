//! Metric and leave-one-out harness properties.

use mrnr::eval::{accuracy, auc, fold_rows, loo_on_features, shuffle_labels};
use mrnr::pipeline::FeatureRow;
use mrnr::{FeatureLayout, SubjectFeatures, SvmOptions};
use proptest::prelude::*;

fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<i8>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec((-8i32..8).prop_map(|v| f64::from(v) / 4.0), n),
            prop::collection::vec(prop::bool::ANY, n),
        )
            .prop_map(|(s, f)| {
                let mut y: Vec<i8> = f.iter().map(|&b| if b { 1 } else { -1 }).collect();
                y[0] = 1;
                y[1] = -1;
                (s, y)
            })
    })
}

fn pairwise(s: &[f64], y: &[i8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] == 1 && y[j] == -1 {
                den += 1.0;
                num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
            }
        }
    }
    num / den
}

/// Two-category subjects whose region-1 feature carries the label.
fn subjects(n: usize, per: usize, offset: f64) -> Vec<SubjectFeatures> {
    (0..n)
        .map(|u| {
            let rows = (0..2 * per)
                .map(|k| {
                    let cat = k / per;
                    let sign = if cat == 0 { 1.0 } else { -1.0 };
                    let jitter = ((u * 31 + k * 17) % 13) as f64 / 13.0;
                    FeatureRow {
                        snapshot_id: format!("s{u}-{k}"),
                        category: cat,
                        time_index: k,
                        values: vec![sign * (offset + jitter), jitter - 0.5, 0.0],
                    }
                })
                .collect();
            SubjectFeatures {
                subject_id: format!("sub-{u}"),
                categories: vec!["a".into(), "b".into()],
                rows,
                voxels: vec![],
            }
        })
        .collect()
}

proptest! {
    #[test]
    fn auc_matches_pairwise_and_negation((s, y) in labelled()) {
        let a = auc(&s, &y).unwrap();
        prop_assert!((a - pairwise(&s, &y)).abs() < 1e-12);
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((auc(&neg, &y).unwrap() - (1.0 - a)).abs() < 1e-12);
        let flipped: Vec<i8> = y.iter().map(|v| -v).collect();
        prop_assert!((auc(&s, &flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn auc_is_invariant_to_monotone_maps((s, y) in labelled()) {
        let m: Vec<f64> = s.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(auc(&s, &y).unwrap(), auc(&m, &y).unwrap());
    }

    #[test]
    fn accuracy_counts_matches((p, y) in labelled()) {
        let pred: Vec<i8> = p.iter().map(|v| if *v > 0.0 { 1 } else { -1 }).collect();
        let hits = pred.iter().zip(&y).filter(|(a, b)| a == b).count();
        prop_assert_eq!(accuracy(&pred, &y).unwrap(), hits as f64 / y.len() as f64);
    }

    #[test]
    fn folds_partition_rows(n in 2usize..6, per in 1usize..4, held in 0usize..6) {
        let subs = subjects(n, per, 1.0);
        let held = held % n;
        let (train, test) = fold_rows(&subs, held);
        prop_assert_eq!(train.len() + test.len(), n * 2 * per);
        prop_assert!(test.iter().all(|&(u, _)| u == held));
        prop_assert!(train.iter().all(|&(u, _)| u != held));
    }

    #[test]
    fn shuffle_keeps_label_counts(n in 2usize..5, per in 1usize..6, seed in any::<u64>()) {
        let subs = subjects(n, per, 1.0);
        let shuffled = shuffle_labels(&subs, seed);
        for (a, b) in subs.iter().zip(&shuffled) {
            let mut ca: Vec<usize> = a.rows.iter().map(|r| r.category).collect();
            let mut cb: Vec<usize> = b.rows.iter().map(|r| r.category).collect();
            ca.sort_unstable();
            cb.sort_unstable();
            prop_assert_eq!(ca, cb);
            for (ra, rb) in a.rows.iter().zip(&b.rows) {
                prop_assert_eq!(&ra.values, &rb.values);
            }
        }
        prop_assert_eq!(shuffle_labels(&subs, seed), shuffled);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn folds_do_not_depend_on_subject_order(n in 3usize..6, rot in 1usize..5) {
        let layout = FeatureLayout { regions: vec![(1, 0, 2), (2, 2, 1)] };
        let subs = subjects(n, 3, 0.2);
        let mut permuted = subs.clone();
        permuted.rotate_left(rot % n);
        let opts = SvmOptions::default();
        let a = loo_on_features(&subs, &layout, "a", &opts).unwrap();
        let b = loo_on_features(&permuted, &layout, "a", &opts).unwrap();
        for f in &a.folds {
            let g = b.folds.iter().find(|g| g.subject_id == f.subject_id).unwrap();
            prop_assert_eq!(f.accuracy, g.accuracy);
            prop_assert_eq!(f.auc, g.auc);
        }
        prop_assert!((a.mean_accuracy - b.mean_accuracy).abs() < 1e-12);
        // Determinism.
        prop_assert_eq!(a.clone(), loo_on_features(&subs, &layout, "a", &opts).unwrap());
    }
}

#[test]
fn separable_subjects_are_decoded() {
    let layout = FeatureLayout { regions: vec![(1, 0, 2), (2, 2, 1)] };
    let r = loo_on_features(&subjects(4, 3, 1.0), &layout, "a", &SvmOptions::default()).unwrap();
    assert_eq!(r.mean_accuracy, 1.0);
    assert_eq!(r.mean_auc, 1.0);
    assert_eq!(r.std_accuracy, 0.0);
    // Every held-out snapshot was scored exactly once.
    assert_eq!(r.scores.len(), 4 * 6);
}
