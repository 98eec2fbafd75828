use normlens::attention::shift_report;
use normlens::elb::{elb, k50};
use normlens::norm::{normalize, NormConfig, NormMethod};
use normlens::{softmax_row, TokenBatch};
use proptest::prelude::*;

fn batch_strategy() -> impl Strategy<Value = TokenBatch> {
    (1usize..=3, 1usize..=6, 2usize..=8).prop_flat_map(|(n, l, d)| {
        prop::collection::vec(-5.0f64..5.0, n * l * d)
            .prop_filter("tokens must be away from zero", move |v| {
                v.chunks(d).all(|t| t.iter().map(|x| x * x).sum::<f64>() > 1e-6)
            })
            .prop_map(move |v| TokenBatch::from_vec(n, l, d, v).unwrap())
    })
}

fn max_abs_diff(a: &TokenBatch, b: &TokenBatch) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn softmax_is_a_probability_vector(v in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        let p = softmax_row(&v).unwrap();
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_translation_invariance(v in prop::collection::vec(-20.0f64..20.0, 1..40), a in -100.0f64..100.0) {
        let p = softmax_row(&v).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + a).collect();
        let q = softmax_row(&shifted).unwrap();
        for (x, y) in p.iter().zip(&q) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn unitnorm_scale_invariance(x in batch_strategy(), alpha in 1e-3f64..1e3, k in -1.0f64..2.0) {
        let cfg = NormConfig::unit_norm(k);
        let a = normalize(&x, &cfg).unwrap();
        let b = normalize(&x.scaled(alpha), &cfg).unwrap();
        prop_assert!(max_abs_diff(&a, &b) <= 1e-12 * (x.dim() as f64).powf(k / 2.0).max(1.0));
    }

    #[test]
    fn unitnorm_norm_and_direction(x in batch_strategy(), k in -1.0f64..2.0) {
        let y = normalize(&x, &NormConfig::unit_norm(k)).unwrap();
        let target = (x.dim() as f64).powf(k / 2.0);
        let (n, l, _) = x.shape();
        for b in 0..n {
            for i in 0..l {
                let (t, s) = (x.token(b, i), y.token(b, i));
                prop_assert!((s.dot(&s).sqrt() - target).abs() < 1e-9);
                // same direction: cosine 1
                let cos = t.dot(&s) / (t.dot(&t).sqrt() * target);
                prop_assert!((cos - 1.0).abs() < 1e-12);
                for j in 0..l {
                    let (u, v) = (x.token(b, j), y.token(b, j));
                    prop_assert!(t.dot(&u) * s.dot(&v) >= 0.0);
                }
            }
        }
    }

    #[test]
    fn rmsnorm_is_unitnorm_with_unit_modulus(x in batch_strategy()) {
        let a = normalize(&x, &NormConfig::new(NormMethod::RmsNorm)).unwrap();
        let b = normalize(&x, &NormConfig::unit_norm(1.0)).unwrap();
        prop_assert!(max_abs_diff(&a, &b) <= 1e-12);
    }

    #[test]
    fn shift_report_is_scale_invariant_for_unitnorm(x in batch_strategy(), alpha in 0.1f64..10.0) {
        // both attention maps use the same input scale, so only the
        // original scores move when x is rescaled
        let cfg = NormConfig::unit_norm(1.5);
        let a = shift_report(&x, &cfg).unwrap();
        let b = shift_report(&x.scaled(alpha), &cfg).unwrap();
        for (r, s) in a.rows.iter().zip(&b.rows) {
            prop_assert!((r.entropy_normalized - s.entropy_normalized).abs() < 1e-9);
        }
    }

    #[test]
    fn elb_is_decreasing_in_k(l in 2usize..5000, d in 2usize..2048, k in -1.0f64..1.0, step in 1e-3f64..0.5) {
        let gap = |k: f64| 2.0 * (d as f64).powf(k - 0.5);
        prop_assume!(gap(k) > 1e-2 && gap(k + step) < 600.0);
        let (a, b) = (elb(k, l, d).unwrap(), elb(k + step, l, d).unwrap());
        prop_assert!(a > b);
        prop_assert!(b > 0.0 && a < (l as f64).ln());
    }

    #[test]
    fn k50_solves_its_equation(l in 2usize..4096, d in 2usize..4096) {
        let k = k50(l, d, 1e-10).unwrap();
        prop_assert!((elb(k, l, d).unwrap() - 0.5 * (l as f64).ln()).abs() <= 1e-10);
    }
}
