use proptest::prelude::*;
use tunet_core::data::{split_indices, D4Element};
use tunet_core::losses::{dice, focal_value};
use tunet_core::metrics::{f1_scores, LabelMatrix};
use tunet_core::postprocess::{binarize, default_grid, denoise, fit_thresholds, threshold_error};
use tunet_core::train::LrSchedule;
use tunet_core::Tensor;

fn focal1(p: f64, y: f64, gamma: f64) -> f64 {
    let p = Tensor::new(&[1], vec![p]).unwrap();
    let y = Tensor::new(&[1], vec![y]).unwrap();
    focal_value(&p, &y, gamma).unwrap()
}

proptest! {
    #[test]
    fn focal_nonincreasing_in_pt(a in 0.001f64..0.999, b in 0.001f64..0.999, gamma in 0.0f64..5.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        // p_t = p for a positive label.
        prop_assert!(focal1(hi, 1.0, gamma) <= focal1(lo, 1.0, gamma) + 1e-15);
        // p_t = 1 - p for a negative label.
        prop_assert!(focal1(1.0 - hi, 0.0, gamma) <= focal1(1.0 - lo, 0.0, gamma) + 1e-15);
    }

    #[test]
    fn focal_bounded_by_cross_entropy(p in 0.001f64..0.999, gamma in 0.01f64..5.0, y in 0u8..2) {
        let y = y as f64;
        prop_assert!(focal1(p, y, gamma) <= focal1(p, y, 0.0));
    }

    #[test]
    fn dice_symmetric_and_bounded(
        r in prop::collection::vec(0.0f64..=1.0, 16),
        y in prop::collection::vec(prop::bool::ANY, 16),
        eps in 0.0f64..2.0,
    ) {
        let r = Tensor::new(&[4, 4], r).unwrap();
        let mut y: Vec<f64> = y.into_iter().map(|b| b as u8 as f64).collect();
        y[0] = 1.0;
        let y = Tensor::new(&[4, 4], y).unwrap();
        let a = dice(&r, &y, eps).unwrap();
        let b = dice(&y, &r, eps).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn macro_f1_invariant_under_class_permutation(
        bits in prop::collection::vec(prop::bool::ANY, 2 * 24),
        perm_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let (n, c) = (6, 4);
        let pred = LabelMatrix::new(n, c, bits[..24].to_vec()).unwrap();
        let truth = LabelMatrix::new(n, c, bits[24..].to_vec()).unwrap();
        let mut perm: Vec<usize> = (0..c).collect();
        perm.shuffle(&mut tunet_core::rng::stream_rng(perm_seed, 0));
        let a = f1_scores(&pred, &truth).unwrap().macro_f1();
        let b = f1_scores(&pred.permute_classes(&perm), &truth.permute_classes(&perm)).unwrap().macro_f1();
        prop_assert!((a - b).abs() <= 1e-15);
    }

    #[test]
    fn fitted_thresholds_no_worse_than_half(
        probs in prop::collection::vec(0.0f64..1.0, 30),
        bits in prop::collection::vec(prop::bool::ANY, 30),
    ) {
        let (n, c) = (10, 3);
        let p = Tensor::new(&[n, c], probs).unwrap();
        let y = LabelMatrix::new(n, c, bits).unwrap();
        let t = fit_thresholds(&p, &y, &default_grid()).unwrap();
        for k in 0..c {
            prop_assert!(threshold_error(&p, &y, k, t.as_slice()[k]) <= threshold_error(&p, &y, k, 0.5));
        }
    }

    #[test]
    fn fitted_thresholds_invariant_to_sample_order(
        probs in prop::collection::vec(0.0f64..1.0, 24),
        bits in prop::collection::vec(prop::bool::ANY, 24),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let (n, c) = (8, 3);
        let p = Tensor::new(&[n, c], probs.clone()).unwrap();
        let y = LabelMatrix::new(n, c, bits).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut tunet_core::rng::stream_rng(seed, 1));
        let pp = Tensor::from_fn(&[n, c], |i| probs[order[i / c] * c + i % c]);
        let yp = y.select_rows(&order);
        prop_assert_eq!(
            fit_thresholds(&p, &y, &default_grid()).unwrap(),
            fit_thresholds(&pp, &yp, &default_grid()).unwrap()
        );
    }

    #[test]
    fn denoise_idempotent_and_subset(
        probs in prop::collection::vec(0.0f64..1.0, 144),
        min_area in 1usize..8,
    ) {
        let soft = Tensor::new(&[1, 12, 12], probs).unwrap();
        let bin = binarize(&soft, 0.5).unwrap().channel(0);
        let once = denoise(&bin, min_area).unwrap();
        let twice = denoise(&once, min_area).unwrap();
        prop_assert_eq!(&once, &twice);
        for (o, b) in once.data().iter().zip(bin.data()) {
            prop_assert!(*o <= *b);
        }
    }

    #[test]
    fn lr_schedule_within_bounds(initial in 1e-5f64..1.0, cycle in 1usize..30, epoch in 0usize..500) {
        let s = LrSchedule { cycle_len: cycle, ..LrSchedule::from_initial(initial) };
        let lr = s.lr(epoch);
        prop_assert!(lr >= s.lr_min * (1.0 - 1e-12) && lr <= s.lr_max);
    }

    #[test]
    fn split_is_a_partition(n in 1usize..300, frac in 0.0f64..0.9, seed in any::<u64>()) {
        let s = split_indices(n, frac, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s.val.len(), (n as f64 * frac + 1e-9).floor() as usize);
    }

    #[test]
    fn d4_elements_are_bijections(vals in prop::collection::vec(0.0f32..1.0, 2 * 25)) {
        let t = Tensor::new(&[2, 5, 5], vals).unwrap();
        for e in D4Element::all() {
            let mut moved = e.apply(&t).unwrap().into_data();
            let mut orig = t.data().to_vec();
            moved.sort_by(f32::total_cmp);
            orig.sort_by(f32::total_cmp);
            prop_assert_eq!(moved, orig);
        }
    }
}
