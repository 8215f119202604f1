//! Similarity measure and grid-search registration properties.

use mrnr::register::{apply_transform, find_transform_scored, nmi_values, transform_score, RegistrationConfig};
use mrnr::{AffineTransform, Dims, Volume3D};
use proptest::prelude::*;

fn blob(dims: Dims, shift: [i64; 3]) -> Volume3D {
    let data = (0..dims.len())
        .map(|i| {
            let (x, y, z) = dims.coords(i);
            let p = [x as f64 - shift[0] as f64, y as f64 - shift[1] as f64, z as f64 - shift[2] as f64];
            let a = (-((p[0] - 6.0).powi(2) + (p[1] - 7.0).powi(2) + (p[2] - 6.5).powi(2)) / 6.0).exp();
            let b = 0.6 * (-((p[0] - 9.5).powi(2) + (p[1] - 5.0).powi(2) + (p[2] - 8.0).powi(2)) / 3.0).exp();
            a + b
        })
        .collect();
    Volume3D::from_data(dims, data).unwrap()
}

proptest! {
    #[test]
    fn nmi_is_bounded_and_symmetric(a in prop::collection::vec(-5.0f64..5.0, 2..200), seed in any::<u64>(), bins in 2usize..40) {
        let mut s = seed | 1;
        let b: Vec<f64> = a.iter().map(|v| {
            s ^= s << 13; s ^= s >> 7; s ^= s << 17;
            v + (s % 100) as f64 / 50.0
        }).collect();
        let ab = nmi_values(&a, &b, bins).unwrap();
        let ba = nmi_values(&b, &a, bins).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((1.0 - 1e-12..=2.0 + 1e-12).contains(&ab), "nmi {ab}");
        let aa = nmi_values(&a, &a, bins).unwrap();
        prop_assert!(aa == 1.0 || (aa - 2.0).abs() < 1e-9);
    }

    #[test]
    fn nmi_invariant_to_positive_affine_intensity(a in prop::collection::vec(-5.0f64..5.0, 2..100), k in 0.1f64..10.0, c in -5.0f64..5.0) {
        let b: Vec<f64> = a.iter().map(|v| k * v + c).collect();
        let v = nmi_values(&a, &b, 16).unwrap();
        prop_assert!(v == 1.0 || (v - 2.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn integer_shifts_are_recovered(sx in -3i64..=3, sy in -3i64..=3, sz in -3i64..=3) {
        let dims = Dims::new(16, 16, 16);
        let reference = blob(dims, [0, 0, 0]);
        let moving = blob(dims, [sx, sy, sz]);
        let cfg = RegistrationConfig { translation_range: 3.0, ..RegistrationConfig::search() };
        let (t, best) = find_transform_scored(&moving, &reference, &cfg).unwrap();
        prop_assert_eq!(t.translation, [-sx as f64, -sy as f64, -sz as f64]);
        // Rescan: no candidate scores higher, and the first maximum wins.
        let grid = cfg.grid(dims, dims).unwrap();
        let scores: Vec<f64> = grid.iter().map(|g| transform_score(&moving, &reference, g, cfg.histogram_bins).unwrap()).collect();
        let first = scores.iter().position(|&s| s == best).unwrap();
        prop_assert!(scores.iter().all(|&s| s <= best));
        prop_assert_eq!(&grid[first], &t);
    }
}

#[test]
fn translation_composes_with_its_inverse_in_the_interior() {
    let dims = Dims::new(10, 10, 10);
    let v = blob(dims, [0, 0, 0]);
    let fwd = apply_transform(v.data(), &AffineTransform::translation(dims, dims, [2.0, -1.0, 1.0])).unwrap();
    let back = apply_transform(&fwd, &AffineTransform::translation(dims, dims, [-2.0, 1.0, -1.0])).unwrap();
    for i in 0..dims.len() {
        let (x, y, z) = dims.coords(i);
        if (2..8).contains(&x) && (2..8).contains(&y) && (2..8).contains(&z) {
            assert_eq!(back[i], v.data()[i]);
        }
    }
}
