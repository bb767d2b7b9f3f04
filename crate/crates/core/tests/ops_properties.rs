use hmsnet::ops::*;
use hmsnet::oracle::*;
use hmsnet::{Array3, Mask2, MaskedMap, EPS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn si_conv_matches_naive(seed in any::<u64>(), c in 1usize..=4, h in 1usize..=8, w in 1usize..=8, half in 0usize..=2, density in 0.0f64..1.0) {
        let mut r = rng(seed);
        let m = random_mask(&mut r, h, w, density);
        let p = random_raw_map(&mut r, c, m);
        let k = random_conv_kernel(&mut r, 3, c, half);
        let z = si_conv_forward(&p, &k).unwrap();
        let (nz, nm) = naive_si_conv(&p, &k);
        prop_assert_eq!(z.mask(), &nm);
        prop_assert!(z.features().max_abs_diff(&nz) < 1e-10);
        prop_assert!(z.is_canonical());
    }

    #[test]
    fn si_upsample_matches_naive(seed in any::<u64>(), c in 1usize..=4, h in 1usize..=8, w in 1usize..=8, density in 0.0f64..1.0) {
        let mut r = rng(seed);
        let m = random_mask(&mut r, h, w, density);
        let p = random_raw_map(&mut r, c, m);
        let z = si_upsample_forward(&p).unwrap();
        let (nz, nm) = naive_si_upsample(&p);
        prop_assert_eq!(z.mask(), &nm);
        prop_assert!(z.features().max_abs_diff(&nz) < 1e-10);
    }

    #[test]
    fn si_maxpool_matches_naive(seed in any::<u64>(), c in 1usize..=4, h in 1usize..=4, w in 1usize..=4, density in 0.0f64..1.0) {
        let mut r = rng(seed);
        let m = random_mask(&mut r, 2 * h, 2 * w, density);
        let p = random_raw_map(&mut r, c, m);
        let z = si_maxpool(&p, 2).unwrap();
        let (nz, nm) = naive_si_maxpool(&p);
        prop_assert_eq!(z.mask(), &nm);
        prop_assert_eq!(z.features(), &nz);
    }

    #[test]
    fn si_average_matches_naive(seed in any::<u64>(), c in 1usize..=4, h in 1usize..=8, w in 1usize..=8) {
        let mut r = rng(seed);
        let (mp, mq) = (random_mask(&mut r, h, w, 0.5), random_mask(&mut r, h, w, 0.5));
        let p = random_raw_map(&mut r, c, mp);
        let q = random_raw_map(&mut r, c, mq);
        let z = si_average(&p, &q).unwrap();
        let (nz, nm) = naive_si_average(&p, &q);
        prop_assert_eq!(z.mask(), &nm);
        prop_assert!(z.features().max_abs_diff(&nz) < 1e-10);
    }

    #[test]
    fn si_concat_conv_matches_naive(seed in any::<u64>(), c1 in 1usize..=4, c2 in 1usize..=4, h in 1usize..=8, w in 1usize..=8) {
        let mut r = rng(seed);
        let (mp, mq) = (random_mask(&mut r, h, w, 0.5), random_mask(&mut r, h, w, 0.5));
        let p = random_raw_map(&mut r, c1, mp);
        let q = random_raw_map(&mut r, c2, mq);
        let ak = random_adaptive_kernel(&mut r, 2, c1, c2);
        let z = si_concat_conv_forward(&p, &q, &ak).unwrap();
        let (nz, nm) = naive_si_concat_conv(&p, &q, &ak);
        prop_assert_eq!(z.mask(), &nm);
        prop_assert!(z.features().max_abs_diff(&nz) < 1e-10);
    }

    #[test]
    fn garbage_at_invalid_locations_changes_nothing(seed in any::<u64>(), density in 0.0f64..1.0) {
        let mut r = rng(seed);
        let p = random_map(&mut r, 2, 6, 6, density);
        let q = random_map(&mut r, 2, 6, 6, density);
        let (pg, qg) = (inject_garbage(&mut r, &p), inject_garbage(&mut r, &q));
        let k = random_conv_kernel(&mut r, 2, 2, 2);
        let ak = random_adaptive_kernel(&mut r, 2, 2, 2);
        let d6 = Array3::from_fn(2, 6, 6, |c, y, x| (c + y * 6 + x) as f64 * 0.1 - 1.0);
        let d12 = Array3::from_fn(2, 12, 12, |c, y, x| ((c + y + x) % 5) as f64 - 2.0);
        let d3 = Array3::from_fn(2, 3, 3, |c, y, x| (c * 9 + y * 3 + x) as f64);
        prop_assert_eq!(si_conv_forward(&p, &k).unwrap(), si_conv_forward(&pg, &k).unwrap());
        prop_assert_eq!(si_conv_backward(&p, &k, &d6).unwrap(), si_conv_backward(&pg, &k, &d6).unwrap());
        prop_assert_eq!(si_upsample_forward(&p).unwrap(), si_upsample_forward(&pg).unwrap());
        prop_assert_eq!(si_upsample_backward(&p, &d12).unwrap(), si_upsample_backward(&pg, &d12).unwrap());
        prop_assert_eq!(si_maxpool(&p, 2).unwrap(), si_maxpool(&pg, 2).unwrap());
        prop_assert_eq!(si_maxpool_backward(&p, &d3).unwrap(), si_maxpool_backward(&pg, &d3).unwrap());
        prop_assert_eq!(si_average(&p, &q).unwrap(), si_average(&pg, &qg).unwrap());
        prop_assert_eq!(si_average_backward(&p, &q, &d6).unwrap(), si_average_backward(&pg, &qg, &d6).unwrap());
        prop_assert_eq!(si_concat_conv_forward(&p, &q, &ak).unwrap(), si_concat_conv_forward(&pg, &qg, &ak).unwrap());
        prop_assert_eq!(si_concat_conv_backward(&p, &q, &ak, &d6).unwrap(), si_concat_conv_backward(&pg, &qg, &ak, &d6).unwrap());
        prop_assert_eq!(relu_masked(&p).unwrap(), relu_masked(&pg).unwrap());
        prop_assert_eq!(relu_masked_backward(&p, &d6).unwrap(), relu_masked_backward(&pg, &d6).unwrap());
    }

    #[test]
    fn input_gradients_vanish_where_masks_are_zero(seed in any::<u64>(), density in 0.0f64..1.0) {
        let mut r = rng(seed);
        let p = random_map(&mut r, 2, 6, 6, density);
        let q = random_map(&mut r, 2, 6, 6, density);
        let k = random_conv_kernel(&mut r, 2, 2, 1);
        let ak = random_adaptive_kernel(&mut r, 2, 2, 2);
        let d = Array3::filled(2, 6, 6, 1.0);
        let zero_outside = |g: &Array3, m: &Mask2| {
            (0..g.channels()).all(|c| (0..6).all(|y| (0..6).all(|x| m.is_valid(y, x) || g.get(c, y, x) == 0.0)))
        };
        prop_assert!(zero_outside(si_conv_backward(&p, &k, &d).unwrap().input(0), p.mask()));
        let g = si_average_backward(&p, &q, &d).unwrap();
        prop_assert!(zero_outside(g.input(0), p.mask()) && zero_outside(g.input(1), q.mask()));
        let g = si_concat_conv_backward(&p, &q, &ak, &d).unwrap();
        prop_assert!(zero_outside(g.input(0), p.mask()) && zero_outside(g.input(1), q.mask()));
        prop_assert!(zero_outside(si_upsample_backward(&p, &Array3::filled(2, 12, 12, 1.0)).unwrap().input(0), p.mask()));
        prop_assert!(zero_outside(si_maxpool_backward(&p, &Array3::filled(2, 3, 3, 1.0)).unwrap().input(0), p.mask()));
    }

    #[test]
    fn masks_stay_binary_and_outputs_canonical(seed in any::<u64>(), density in 0.0f64..1.0) {
        let mut r = rng(seed);
        let p = random_raw_map(&mut r, 2, random_mask(&mut ChaCha8Rng::seed_from_u64(seed ^ 1), 8, 8, density));
        let q = random_map(&mut r, 2, 8, 8, density);
        let k = random_conv_kernel(&mut r, 2, 2, 2);
        let ak = random_adaptive_kernel(&mut r, 3, 2, 2);
        for z in [
            si_conv_forward(&p, &k).unwrap(),
            si_upsample_forward(&p).unwrap(),
            si_maxpool(&p, 2).unwrap(),
            si_average(&p, &q).unwrap(),
            si_concat_conv_forward(&p, &q, &ak).unwrap(),
            relu_masked(&p).unwrap(),
        ] {
            prop_assert!(z.mask().is_binary());
            prop_assert!(z.is_canonical());
            prop_assert!(z.features().is_finite());
        }
    }

    #[test]
    fn conv_mask_is_window_maxpool(seed in any::<u64>(), half in 0usize..=2, density in 0.0f64..0.5) {
        let mut r = rng(seed);
        let m = random_mask(&mut r, 8, 8, density);
        prop_assert_eq!(conv_output_mask(&m, half), naive_window_maxpool(&m, half));
    }

    #[test]
    fn normalization_on_constant_fields(seed in any::<u64>(), c in 0.1f64..100.0, b in -5.0f64..5.0) {
        let mut r = rng(seed);
        let m = random_mask(&mut r, 10, 10, 0.3);
        let p = MaskedMap::raw(Array3::filled(1, 10, 10, c), m).unwrap();
        let k = ConvKernel::new(1, 1, 2, vec![1.0; 25], vec![b]).unwrap();
        let z = si_conv_forward(&p, &k).unwrap();
        for (i, v) in z.features().data().iter().enumerate() {
            if z.mask().data()[i] == 1.0 {
                prop_assert!((v - (c + b)).abs() < 1e-6 * c.max(1.0));
            }
        }
    }
}

/// Dense counterparts: deviations are exactly the ε term in the normalizer.
#[test]
fn dense_reductions_up_to_epsilon() {
    let mut r = rng(5);
    let x = Array3::from_fn(3, 8, 8, |_, _, _| rand::Rng::gen_range(&mut r, 0.5..2.0));
    let y = Array3::from_fn(3, 8, 8, |_, _, _| rand::Rng::gen_range(&mut r, 0.5..2.0));
    let p = MaskedMap::raw(x.clone(), Mask2::ones(8, 8)).unwrap();
    let q = MaskedMap::raw(y.clone(), Mask2::ones(8, 8)).unwrap();
    let rel = |a: f64, b: f64| ((a - b) / b).abs();

    let mut k = random_conv_kernel(&mut r, 2, 3, 2);
    k.bias_mut().fill(0.0);
    let z = si_conv_forward(&p, &k).unwrap();
    let dense = dense_conv(&x, &k, 1.0 / 25.0);
    for c in 0..2 {
        for u in 2..6 {
            for v in 2..6 {
                let want = dense.get(c, u, v) * 25.0 / (25.0 + EPS);
                assert!(rel(z.features().get(c, u, v), want) < 1e-13);
                assert!(rel(z.features().get(c, u, v), dense.get(c, u, v)) < 1e-9);
            }
        }
    }

    let up = si_upsample_forward(&p).unwrap();
    let plain = bilinear_up2(&x);
    assert_eq!(plain, naive_bilinear_up2(&x));
    for (a, b) in up.features().data().iter().zip(plain.data()) {
        assert!(rel(*a, b / (1.0 + EPS)) < 1e-13);
    }

    let avg = si_average(&p, &q).unwrap();
    for (i, a) in avg.features().data().iter().enumerate() {
        let b = (x.data()[i] + y.data()[i]) / 2.0;
        assert!(rel(*a, b * 2.0 / (2.0 + EPS)) < 1e-13);
    }

    let ak = random_adaptive_kernel(&mut r, 2, 3, 3);
    let cc = si_concat_conv_forward(&p, &q, &ak).unwrap();
    let d = dense_concat_conv(&x, &y, ak.set(Scenario::Both), ak.bias());
    for (a, b) in cc.features().data().iter().zip(d.data()) {
        assert!(rel(*a, *b) < 1e-12);
    }
}

#[test]
fn concat_conv_reduces_to_first_kernel_without_guidance() {
    let mut r = rng(8);
    let p = random_map(&mut r, 2, 6, 6, 0.5);
    let q = MaskedMap::raw(Array3::zeros(3, 6, 6), Mask2::zeros(6, 6)).unwrap();
    let ak = random_adaptive_kernel(&mut r, 2, 2, 3);
    let z = si_concat_conv_forward(&p, &q, &ak).unwrap();
    let dense = dense_concat_conv(p.features(), q.features(), ak.set(Scenario::FirstOnly), ak.bias());
    for c in 0..2 {
        for y in 0..6 {
            for x in 0..6 {
                let want = if p.mask().is_valid(y, x) { dense.get(c, y, x) } else { 0.0 };
                assert!((z.features().get(c, y, x) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn adaptive_kernel_sets_only_learn_from_their_scenario() {
    let mut r = rng(9);
    // x valid only on the left half, y only on the top half
    let mp = Mask2::from_fn(6, 6, |_, x| x < 3);
    let mq = Mask2::from_fn(6, 6, |y, _| y < 3);
    let p = random_raw_map(&mut r, 2, mp).canonical();
    let q = random_raw_map(&mut r, 2, mq).canonical();
    let ak = random_adaptive_kernel(&mut r, 1, 2, 2);
    // gradient only in the bottom-left quadrant, where just x is valid
    let d = Array3::from_fn(1, 6, 6, |_, y, x| if y >= 3 && x < 3 { 1.0 } else { 0.0 });
    let g = si_concat_conv_backward(&p, &q, &ak, &d).unwrap();
    let ag = g.adaptive().expect("adaptive kernel gradient");
    assert!(ag.set(Scenario::FirstOnly).iter().any(|v| *v != 0.0));
    assert!(ag.set(Scenario::SecondOnly).iter().all(|v| *v == 0.0));
    assert!(ag.set(Scenario::Both).iter().all(|v| *v == 0.0));
}
