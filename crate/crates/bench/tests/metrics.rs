//! Metrics against brute-force oracles and their symmetry properties.

#[path = "support/oracles.rs"]
mod oracles;

use proptest::prelude::*;
use ttga_bench::metrics::default_nsd_tolerance;
use ttga_bench::{dice, error_ground_truth, hd95, nsd, roc_auc};
use ttga_core::{BinaryMask, LatentGrid, SeededRng, Shape};

#[test]
fn thousand_fixtures_match_brute_force() {
    for seed in 0..1000 {
        let (a, b) = oracles::fixture(seed);
        assert_eq!(dice(&a, &b).unwrap(), oracles::dice(&a, &b), "dice {seed}");
        assert_eq!(hd95(&a, &b).unwrap(), oracles::hd95(&a, &b), "hd95 {seed}");
        let tol = default_nsd_tolerance(a.height(), a.width());
        for t in [0.0, 1.0, tol, 2.5] {
            assert_eq!(nsd(&a, &b, t).unwrap(), oracles::nsd(&a, &b, t), "nsd {seed} tol {t}");
        }
        let s = oracles::scores(a.len(), seed);
        assert_eq!(roc_auc(&s, b.bits()), oracles::auc(&s, b.bits()), "auc {seed}");
    }
}

#[test]
fn hd95_single_pixels_at_distance_five() {
    let a = BinaryMask::from_fn(10, 10, |y, x| y == 1 && x == 1);
    let b = BinaryMask::from_fn(10, 10, |y, x| y == 4 && x == 5);
    assert_eq!(hd95(&a, &b).unwrap(), 5.0);
}

#[test]
fn auc_roles_are_not_interchangeable() {
    // swapping which vector is the score and which the label changes the value
    let s = [0.1, 0.4, 0.35, 0.8];
    let l = [false, false, true, true];
    assert_eq!(roc_auc(&s, &l), Some(75.0));
    let s2: Vec<f64> = l.iter().map(|&b| b as u8 as f64).collect();
    let l2: Vec<bool> = s.iter().map(|&v| v >= 0.375).collect();
    assert_ne!(roc_auc(&s2, &l2), roc_auc(&s, &l));
}

fn mask_from(seed: u64, h: usize, w: usize, p: f64) -> BinaryMask {
    let mut rng = SeededRng::new(seed, 9);
    BinaryMask::from_fn(h, w, |_, _| rng.bernoulli(p))
}

proptest! {
    #[test]
    fn dice_and_nsd_are_symmetric(seed in any::<u64>(), h in 1usize..14, w in 1usize..14, p in 0.0f64..1.0, q in 0.0f64..1.0, tol in 0.0f64..3.0) {
        let a = mask_from(seed, h, w, p);
        let b = mask_from(seed ^ 0x5555, h, w, q);
        prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        prop_assert_eq!(nsd(&a, &b, tol).unwrap(), nsd(&b, &a, tol).unwrap());
        prop_assert_eq!(hd95(&a, &b).unwrap(), hd95(&b, &a).unwrap());
    }

    #[test]
    fn error_mask_empty_iff_prediction_matches(seed in any::<u64>(), h in 1usize..10, w in 1usize..10) {
        let mut rng = SeededRng::new(seed, 3);
        let prob = LatentGrid::from_fn(Shape::new(h, w, 1), |_, _, _| rng.uniform());
        let gt = if rng.bernoulli(0.5) {
            BinaryMask::threshold(&prob, 0.5)
        } else {
            mask_from(seed, h, w, 0.5)
        };
        let err = error_ground_truth(&prob, &gt).unwrap();
        prop_assert_eq!(!err.any(), BinaryMask::threshold(&prob, 0.5) == gt);
    }
}
