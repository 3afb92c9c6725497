use fgan_core::checkpoint;
use fgan_core::metrics::{auprc, auroc, histogram, prf_at_contamination, ranking};
use fgan_core::neural::{grad_check, DEFAULT_CLAMP_EPS};
use fgan_core::*;
use proptest::prelude::*;

fn scored_labels(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2..=max)
        .prop_flat_map(|n| (prop::collection::vec(0u8..20, n), prop::collection::vec(any::<bool>(), n)))
        .prop_filter("both classes", |(_, y)| y.iter().any(|&b| b) && y.iter().any(|&b| !b))
        .prop_map(|(s, y)| (s.into_iter().map(|v| f64::from(v) / 20.0).collect(), y))
}

fn pairwise_auroc(s: &[f64], y: &[bool]) -> f64 {
    let (mut hit, mut n) = (0.0, 0.0);
    for (si, _) in s.iter().zip(y).filter(|p| *p.1) {
        for (sj, _) in s.iter().zip(y).filter(|p| !*p.1) {
            n += 1.0;
            hit += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
        }
    }
    hit / n
}

proptest! {
    #[test]
    fn auroc_matches_pairs((s, y) in scored_labels(64)) {
        prop_assert!((auroc(&s, &y).unwrap() - pairwise_auroc(&s, &y)).abs() <= 1e-12);
    }

    #[test]
    fn auroc_flips_with_labels((s, y) in scored_labels(40)) {
        // Break ties so the complement identity holds exactly.
        let s: Vec<f64> = s.iter().enumerate().map(|(i, v)| v + i as f64 * 1e-6).collect();
        let flipped: Vec<bool> = y.iter().map(|b| !b).collect();
        let sum = auroc(&s, &y).unwrap() + auroc(&s, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn auroc_ignores_increasing_maps((s, y) in scored_labels(64), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let mapped: Vec<f64> = s.iter().map(|v| a * v.powi(3) + b).collect();
        prop_assert!((auroc(&s, &y).unwrap() - auroc(&mapped, &y).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn auprc_is_a_mean_of_precisions((s, y) in scored_labels(64)) {
        let order = ranking(&s);
        let (mut tp, mut total) = (0usize, 0.0);
        for (k, &i) in order.iter().enumerate() {
            if y[i] {
                tp += 1;
                total += tp as f64 / (k + 1) as f64;
            }
        }
        let want = total / tp as f64;
        prop_assert!((auprc(&s, &y).unwrap() - want).abs() <= 1e-12);
    }

    #[test]
    fn contamination_flags_ceil_qn((s, y) in scored_labels(64), q in 0.01f64..=1.0) {
        let r = prf_at_contamination(&s, &y, q).unwrap();
        let n = s.len();
        prop_assert_eq!(r.flagged, (q * n as f64 - 1e-9).ceil() as usize);
        let tp = ranking(&s).iter().take(r.flagged).filter(|&&i| y[i]).count();
        prop_assert!((r.precision * r.flagged as f64 - tp as f64).abs() < 1e-9);
        for v in [r.precision, r.recall, r.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn histogram_conserves_mass(s in prop::collection::vec(0.0f64..1.0, 0..200), bins in 1usize..60) {
        let h = histogram(&s, bins, 0.0, 1.0, false).unwrap();
        prop_assert_eq!(h.counts.len(), bins);
        prop_assert_eq!(h.counts.iter().sum::<usize>() + h.below + h.above, s.len());
        prop_assert_eq!(h.below + h.above, 0);
    }

    #[test]
    fn network_checkpoint_round_trips(seed in any::<u64>(), hidden in 1usize..8) {
        let mut rng = RngState::new(seed);
        let net = Mlp64::init_glorot(
            &mut rng,
            &[3, hidden, 1],
            &[Activation::Tanh, Activation::Sigmoid],
            &[0.1, 0.0],
            DEFAULT_CLAMP_EPS,
        ).unwrap();
        let bytes = checkpoint::encode_network(&net).unwrap();
        prop_assert_eq!(checkpoint::decode_network::<f64>(&bytes).unwrap(), net);
    }

    #[test]
    fn matmul_distributes(seed in any::<u64>(), r in 1usize..6, k in 1usize..6, c in 1usize..6) {
        let mut rng = RngState::new(seed);
        let a = Matrix64::sample_standard_normal(&mut rng, r, k).unwrap();
        let b = Matrix64::sample_standard_normal(&mut rng, k, c).unwrap();
        let d = Matrix64::sample_standard_normal(&mut rng, k, c).unwrap();
        let lhs = a.matmul(&b.add(&d).unwrap()).unwrap();
        let rhs = a.matmul(&b).unwrap().add(&a.matmul(&d).unwrap()).unwrap();
        for (x, y) in lhs.as_slice().iter().zip(rhs.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
        prop_assert_eq!(a.matmul(&b).unwrap().transpose(), b.transpose().matmul(&a.transpose()).unwrap());
    }
}

#[test]
fn grad_check_is_exact_on_quadratics() {
    let g = grad_check(|x| x[0] * x[0] + 3.0 * x[1] * x[1], &[3.0, -1.0], &[6.0, -6.0], 1e-5);
    assert!(g.max_rel_error < 1e-9, "{g:?}");
}
