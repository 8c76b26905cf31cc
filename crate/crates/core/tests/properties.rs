//! Property-based invariants of the metrics, preprocessing and scaling.

use longiprog::eval::{auc, delong_ci, delong_variance, youden, ScoreSet};
use longiprog::model::interval_scales;
use longiprog::nn::Tensor;
use longiprog::preprocess::{flip_horizontal, resize_to, RawImage};
use proptest::prelude::*;

/// Scores on a coarse grid (so ties occur) with both classes present.
fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..60)
        .prop_flat_map(|n| (prop::collection::vec(0u32..=20, n), prop::collection::vec(0u8..=1, n)))
        .prop_map(|(grid, mut labels)| {
            labels[0] = 1;
            labels[1] = 0;
            (grid.into_iter().map(|g| f64::from(g) / 20.0).collect(), labels)
        })
}

proptest! {
    #[test]
    fn auc_of_reversed_scores_is_complement((scores, labels) in scored()) {
        let a = auc(&ScoreSet::from_slices(&scores, &labels).unwrap()).unwrap();
        let flipped: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        let b = auc(&ScoreSet::from_slices(&flipped, &labels).unwrap()).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_ignores_monotone_transforms((scores, labels) in scored()) {
        let a = auc(&ScoreSet::from_slices(&scores, &labels).unwrap()).unwrap();
        let squared: Vec<f64> = scores.iter().map(|s| s * s).collect();
        let b = auc(&ScoreSet::from_slices(&squared, &labels).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn youden_index_is_non_negative_and_bounded((scores, labels) in scored()) {
        let op = youden(&ScoreSet::from_slices(&scores, &labels).unwrap()).unwrap();
        let j = op.youden_index();
        prop_assert!((0.0..=1.0).contains(&j), "{j}");
        prop_assert!((0.0..=1.0).contains(&op.sensitivity) && (0.0..=1.0).contains(&op.specificity));
    }

    #[test]
    fn delong_interval_holds_estimate_inside_unit_range((scores, labels) in scored()) {
        let set = ScoreSet::from_slices(&scores, &labels).unwrap();
        prop_assume!(set.positives() >= 2 && set.negatives() >= 2);
        let est = delong_variance(&set).unwrap();
        prop_assert!(est.se >= 0.0);
        let ci = delong_ci(est.auc, est.se, 0.95).unwrap();
        prop_assert!(0.0 <= ci.lower && ci.lower <= est.auc && est.auc <= ci.upper && ci.upper <= 1.0);
    }

    #[test]
    fn interval_scales_invert_the_gap(
        gaps in prop::collection::vec(0.05f64..5.0, 1..6),
        lead in 0.05f64..5.0,
    ) {
        let times: Vec<f64> = gaps.iter().scan(0.0, |t, g| { *t += g; Some(*t) }).collect();
        let predict = times[times.len() - 1] + lead;
        let scales = interval_scales(&times, predict).unwrap();
        for (s, t) in scales.as_slice().iter().zip(&times) {
            prop_assert!((s * (predict - t) - 1.0).abs() < 1e-12);
        }
        prop_assert!(scales.as_slice().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn resize_keeps_constant_images_constant(
        h in 2usize..20, w in 2usize..20, out in 1usize..24, v in 0.0f64..1.0,
    ) {
        let img = Tensor::new(vec![h, w, 3], vec![v; h * w * 3]).unwrap();
        let r = resize_to(&img, out, out).unwrap();
        prop_assert!(r.data().iter().all(|x| (x - v).abs() < 1e-12));
    }

    #[test]
    fn flipping_twice_is_identity(h in 1usize..8, w in 1usize..8, seed in any::<u64>()) {
        let data: Vec<f64> = (0..h * w * 3).map(|i| ((i as u64).wrapping_mul(seed | 1) % 97) as f64).collect();
        let img = Tensor::new(vec![h, w, 3], data).unwrap();
        prop_assert_eq!(flip_horizontal(&flip_horizontal(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn ppm_round_trip(w in 16usize..40, h in 16usize..40, fill in any::<u8>()) {
        let pixels: Vec<u8> = (0..w * h * 3).map(|i| (i as u8).wrapping_add(fill)).collect();
        let img = RawImage::new(w, h, pixels).unwrap();
        prop_assert_eq!(RawImage::from_ppm(&img.to_ppm()).unwrap(), img);
    }
}
