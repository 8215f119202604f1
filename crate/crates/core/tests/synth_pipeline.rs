//! The synthetic forward model seen through the processing chain.

use mrnr::eval::loo_evaluate;
use mrnr::pipeline::{design_for, snapshots_for};
use mrnr::{generate, SynthConfig};

fn small() -> SynthConfig {
    SynthConfig {
        subjects: 4,
        events_per_category: 4,
        t: 180,
        dims: [8, 8, 8],
        regions: 10,
        informative_regions: 2,
        ..SynthConfig::default()
    }
}

#[test]
fn noise_free_snapshots_carry_the_true_pattern() {
    let cfg = SynthConfig { noise_std: 0.0, ..SynthConfig::default() };
    let (exp, truth) = generate(&cfg).unwrap();
    for s in &exp.subjects {
        let d = design_for(s, &exp.params).unwrap();
        let snaps = snapshots_for(s, &d, &exp.params).unwrap();
        for snap in &snaps.snapshots {
            let c = snap.category;
            // In the category's own regions only its regressor is non-zero,
            // so the image is the true map scaled by the design value.
            let scale = d.column(c)[snap.time_index];
            assert!((scale - 1.0).abs() < 0.2, "design value {scale} far from the HRF peak");
            let mut checked = 0;
            for &r in &truth.informative[c] {
                for &v in exp.atlas.region(r) {
                    let want = scale * truth.betas[c][v];
                    assert!((snap.image[v] - want).abs() <= 1e-6, "voxel {v}: {} vs {want}", snap.image[v]);
                    checked += 1;
                }
            }
            assert!(checked > 0);
        }
    }
}

#[test]
fn zero_amplitude_decodes_at_chance() {
    let cfg = SynthConfig { amplitude: 0.0, subjects: 8, ..small() };
    let (exp, truth) = generate(&cfg).unwrap();
    let r = loo_evaluate(&exp, &truth.categories[0]).unwrap();
    // Eight folds of eight snapshots: a band of about three standard errors
    // around one half.
    assert!((0.3..=0.7).contains(&r.mean_accuracy), "accuracy {}", r.mean_accuracy);
}

#[test]
fn default_signal_decodes_well_on_a_small_experiment() {
    let (exp, truth) = generate(&small()).unwrap();
    let r = loo_evaluate(&exp, &truth.categories[0]).unwrap();
    assert!(r.mean_accuracy >= 0.9, "accuracy {}", r.mean_accuracy);
    assert_eq!(r.completed_folds, 4);
}

#[test]
fn extraction_of_a_subject_ignores_the_others() {
    let (exp, _) = generate(&small()).unwrap();
    let all = exp.extract_all().unwrap();
    let mut alone = exp.clone();
    alone.subjects = vec![exp.subjects[2].clone(), exp.subjects[0].clone()];
    let pair = alone.extract_all().unwrap();
    assert_eq!(pair[0], all[2]);
    assert_eq!(pair[1], all[0]);
}
