use expeval::features::{ExpressionCurve, FeatureKind};
use expeval::metric::{
    binomial_exact_probability, mse, mse_values, pearson_values, quantile_partition, standardize_values,
    QuantileScheme, StandardizationKind,
};
use proptest::prelude::*;

fn curve(values: Vec<f64>) -> ExpressionCurve {
    let onsets = (0..values.len()).map(|i| i as f64).collect();
    ExpressionCurve::new(FeatureKind::Velocity, onsets, values).unwrap()
}

fn non_constant(min: usize, max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, min..=max)
        .prop_filter("non-constant", |v| v.iter().any(|x| (x - v[0]).abs() > 1e-3))
}

fn pair(min: usize, max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (min..=max).prop_flat_map(|d| {
        let v = prop::collection::vec(-100.0f64..100.0, d)
            .prop_filter("non-constant", |v| v.iter().any(|x| (x - v[0]).abs() > 1e-3));
        (v.clone(), v)
    })
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn standard_score_mse_matches_correlation((a, b) in pair(4, 512)) {
        let za = standardize_values(&a, StandardizationKind::StandardScore).unwrap();
        let zb = standardize_values(&b, StandardizationKind::StandardScore).unwrap();
        let m = mse_values(&za, &zb).unwrap();
        let r = pearson_values(&a, &b).unwrap();
        prop_assert!((m - (2.0 - 2.0 * r)).abs() < 1e-9, "{} vs {}", m, 2.0 - 2.0 * r);
    }
}

proptest! {
    #[test]
    fn standardization_invariants(x in non_constant(2, 200)) {
        let m = standardize_values(&x, StandardizationKind::Mean).unwrap();
        prop_assert!(mean(&m).abs() < 1e-9);
        let z = standardize_values(&x, StandardizationKind::StandardScore).unwrap();
        prop_assert!(mean(&z).abs() < 1e-9);
        let var = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
        prop_assert!((var - 1.0).abs() < 1e-9);
        let pos: Vec<f64> = x.iter().map(|v| v.abs() + 0.5).collect();
        let l = standardize_values(&pos, StandardizationKind::MeanLog).unwrap();
        prop_assert!(mean(&l).abs() < 1e-9);
        // mean_log is invariant under positive scaling
        let scaled: Vec<f64> = pos.iter().map(|v| v * 3.7).collect();
        let l2 = standardize_values(&scaled, StandardizationKind::MeanLog).unwrap();
        for (p, q) in l.iter().zip(&l2) {
            prop_assert!((p - q).abs() < 1e-9);
        }
        prop_assert_eq!(standardize_values(&x, StandardizationKind::None).unwrap(), x);
    }

    #[test]
    fn mse_is_a_symmetric_premetric((a, b) in pair(2, 64)) {
        let (ca, cb) = (curve(a.clone()), curve(b.clone()));
        prop_assert_eq!(mse(&ca, &cb).unwrap(), mse(&cb, &ca).unwrap());
        prop_assert_eq!(mse(&ca, &ca).unwrap(), 0.0);
        prop_assert!(mse(&ca, &cb).unwrap() >= 0.0);
    }

    #[test]
    fn binomial_pmf_sums_to_one(n in 1u64..=64) {
        let total: f64 = (0..=n).map(|k| binomial_exact_probability(n, k).unwrap()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for k in 0..=n {
            prop_assert_eq!(binomial_exact_probability(n, k).unwrap(), binomial_exact_probability(n, n - k).unwrap());
        }
    }

    #[test]
    fn partition_properties(x in prop::collection::vec(-50.0f64..50.0, 4..300)) {
        for scheme in [QuantileScheme::Quartiles, QuantileScheme::Tails5_90_5] {
            let p = quantile_partition(&curve(x.clone()), scheme).unwrap();
            let d = x.len();
            prop_assert_eq!(p.sizes.iter().sum::<usize>(), d);
            prop_assert!(p.sizes.iter().all(|&s| s >= 1));
            for g in 0..p.sizes.len() {
                let members: Vec<f64> = (0..d).filter(|&t| p.group_of[t] == g).map(|t| x[t]).collect();
                prop_assert_eq!(members.len(), p.sizes[g]);
                prop_assert!((mean(&members) - p.means[g]).abs() < 1e-9);
            }
            // groups are ordered by value
            for s in 0..d {
                for t in 0..d {
                    if p.group_of[s] < p.group_of[t] {
                        prop_assert!(x[s] <= x[t]);
                    }
                }
            }
            if scheme == QuantileScheme::Quartiles {
                let max = *p.sizes.iter().max().unwrap();
                let min = *p.sizes.iter().min().unwrap();
                prop_assert!(max - min <= 1);
            } else {
                let tail = (d * 5 / 100).max(1);
                prop_assert_eq!(p.sizes[0], tail);
                prop_assert_eq!(p.sizes[2], tail);
            }
        }
    }
}

#[test]
fn binomial_against_big_integer_oracle() {
    // exact C(n,k) via u128 Pascal rows, divided by 2^n
    let mut row: Vec<u128> = vec![1];
    for n in 1..=100u64 {
        let mut next = vec![1u128; row.len() + 1];
        for k in 1..row.len() {
            next[k] = row[k - 1] + row[k];
        }
        row = next;
        for k in 0..=n {
            let exact = row[k as usize] as f64 / 2f64.powi(n as i32);
            let got = binomial_exact_probability(n, k).unwrap();
            assert!((got - exact).abs() <= 1e-12 * exact.max(1e-300) + 1e-300, "n={n} k={k}");
        }
    }
}
