use proptest::prelude::*;

use mimo_select::detectors::{detect, detect_all, DetectorId};
use mimo_select::features::extract_features;
use mimo_select::mlp::{argmax, sigmoid, sigmoid_pwl, softmax};
use mimo_select::modem::Constellation;
use mimo_select::numerics::{ComplexMatrix2, ComplexVector2};
use mimo_select::selection::{select_argmax, select_reliable, Margins};
use num_complex::Complex64;

fn complex() -> impl Strategy<Value = Complex64> {
    (-2.0f64..2.0, -2.0f64..2.0).prop_map(|(re, im)| Complex64::new(re, im))
}

fn channel() -> impl Strategy<Value = ComplexMatrix2> {
    prop::array::uniform4(complex())
        .prop_filter("well conditioned", |a| (a[0] * a[3] - a[1] * a[2]).norm() > 1e-3)
        .prop_map(|a| ComplexMatrix2([[a[0], a[1]], [a[2], a[3]]]))
}

fn probabilities() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..1.0, 5).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn reliable_never_below_argmax(r in probabilities(), delta in prop::collection::vec(0.0f64..=1.0, 4)) {
        let m = Margins::new(delta, 0.01).unwrap();
        prop_assert!(select_reliable(&r, &m) >= select_argmax(&r));
    }

    #[test]
    fn zero_margins_reduce_to_argmax(r in probabilities()) {
        let a = select_argmax(&r);
        let d = select_reliable(&r, &Margins::zeros(5));
        prop_assert!(d == 5 || r[d - 1] > r[d]);
        if a == 5 || r[a - 1] > r[a] {
            prop_assert_eq!(d, a);
        }
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-500.0f64..500.0, 1..8)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(argmax(&p), argmax(&logits));
    }

    #[test]
    fn pwl_sigmoid_is_monotone_and_close(a in -10.0f64..10.0, b in -10.0f64..10.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(sigmoid_pwl(lo) <= sigmoid_pwl(hi));
        prop_assert!((sigmoid_pwl(a) - sigmoid(a)).abs() <= 0.02);
        prop_assert!((sigmoid_pwl(a) + sigmoid_pwl(-a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bank_matches_individual_detectors(
        h in channel(),
        y in prop::array::uniform2(complex()),
        log_s2 in -2.0f64..0.0,
        bits in prop::sample::select(vec![2usize, 4, 6]),
    ) {
        let c = Constellation::new(bits).unwrap();
        let (y, s2) = (ComplexVector2(y), 10f64.powf(log_s2));
        let bank = detect_all(&y, &h, s2, &c).unwrap();
        for (i, id) in DetectorId::ALL.iter().enumerate() {
            let solo = detect(*id, &y, &h, s2, &c).unwrap();
            prop_assert_eq!(bank[i], solo);
        }
    }

    #[test]
    fn features_are_scale_free(h in channel(), y in prop::array::uniform2(complex()), a in 1e-3f64..1e3) {
        let y = ComplexVector2(y);
        let f0 = extract_features(&y, &h, 0.1);
        let f1 = extract_features(&y.scale_re(a), &h.scale_re(a), 0.1 * a * a);
        for (p, q) in f0.0.iter().zip(f1.0.iter()) {
            prop_assert!((p - q).abs() <= 1e-9 * p.abs().max(q.abs()).max(1.0));
        }
    }

    #[test]
    fn ed_counts_follow_the_detector(bits in prop::sample::select(vec![2usize, 4, 6, 8])) {
        let full = 1usize << bits;
        let expect = [0, 16.min(full), 32.min(full), 64.min(full), full];
        for (id, e) in DetectorId::ALL.iter().zip(expect) {
            prop_assert_eq!(id.ed_per_layer(bits), e);
        }
    }
}
