mod common;

use fusionattn::stats::{student_t_two_tailed, welch_t_test, ConfusionMatrix, ALPHA};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[test]
fn crafted_confusion_matrix() {
    let c = ConfusionMatrix::from_counts(vec![vec![81, 9], vec![5, 5]]).unwrap();
    assert_eq!(c.weighted_accuracy().unwrap(), 0.86);
    assert_eq!(c.unweighted_accuracy().unwrap(), 0.70);
}

#[test]
fn welch_matches_quadrature_oracle() {
    for (i, (a, b)) in common::welch_pairs().iter().enumerate() {
        let got = welch_t_test(a, b).unwrap();
        let (t, df, p) = common::welch_oracle(a, b);
        assert!((got.t - t).abs() < 1e-12, "pair {i}: t {} vs {t}", got.t);
        assert!((got.df - df).abs() < 1e-9, "pair {i}: df {} vs {df}", got.df);
        assert!((got.p - p).abs() <= 1e-6, "pair {i}: p {} vs {p}", got.p);
    }
}

#[test]
fn welch_matches_statrs() {
    for (i, (a, b)) in common::welch_pairs().iter().enumerate() {
        let got = welch_t_test(a, b).unwrap();
        let dist = StudentsT::new(0.0, 1.0, got.df).unwrap();
        let p = 2.0 * (1.0 - dist.cdf(got.t.abs()));
        assert!((got.p - p).abs() <= 1e-9, "pair {i}: {} vs {p}", got.p);
    }
}

#[test]
fn two_tailed_p_against_density_integral() {
    for &(t, df) in &[(0.3, 2.0), (1.0, 1.0), (2.5, 7.3), (4.0, 30.0), (0.01, 150.0)] {
        let p = student_t_two_tailed(t, df);
        let q = common::two_tailed_p_quadrature(t, df);
        assert!((p - q).abs() <= 1e-8, "t {t} df {df}: {p} vs {q}");
    }
}

#[test]
fn rejection_rate_under_null_is_nominal() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let a_dist = Normal::new(0.6, 0.02).unwrap();
    let b_dist = Normal::new(0.6, 0.05).unwrap();
    let trials = 2000;
    let mut rejected = 0;
    for _ in 0..trials {
        let a: Vec<f64> = (0..10).map(|_| a_dist.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..15).map(|_| b_dist.sample(&mut rng)).collect();
        if welch_t_test(&a, &b).unwrap().p < ALPHA {
            rejected += 1;
        }
    }
    let rate = rejected as f64 / trials as f64;
    assert!((rate - 0.05).abs() <= 0.02, "rejection rate {rate}");
}

fn counts_strategy() -> impl Strategy<Value = Vec<Vec<u64>>> {
    (2usize..6).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(0u64..40, n), n))
}

fn sample(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

proptest! {
    #[test]
    fn accuracies_invariant_under_class_relabeling(counts in counts_strategy(), shift in 0usize..5) {
        let n = counts.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let mut relabeled = vec![vec![0; n]; n];
        for i in 0..n {
            for j in 0..n {
                relabeled[perm[i]][perm[j]] = counts[i][j];
            }
        }
        let a = ConfusionMatrix::from_counts(counts).unwrap();
        let b = ConfusionMatrix::from_counts(relabeled).unwrap();
        prop_assume!(a.total() > 0);
        prop_assert_eq!(a.weighted_accuracy().unwrap(), b.weighted_accuracy().unwrap());
        let (ua, ub) = (a.unweighted_accuracy().unwrap(), b.unweighted_accuracy().unwrap());
        prop_assert!((ua - ub).abs() < 1e-12);
    }

    #[test]
    fn accuracies_lie_in_unit_interval(counts in counts_strategy()) {
        let c = ConfusionMatrix::from_counts(counts).unwrap();
        prop_assume!(c.total() > 0);
        let (wa, uwa) = (c.weighted_accuracy().unwrap(), c.unweighted_accuracy().unwrap());
        prop_assert!((0.0..=1.0).contains(&wa));
        prop_assert!((0.0..=1.0).contains(&uwa));
    }

    #[test]
    fn t_test_is_antisymmetric(a in sample(2..12), b in sample(2..12)) {
        let ab = welch_t_test(&a, &b).unwrap();
        let ba = welch_t_test(&b, &a).unwrap();
        prop_assert_eq!(ab.t, -ba.t);
        prop_assert_eq!(ab.p, ba.p);
        prop_assert!((0.0..=1.0).contains(&ab.p));
    }

    #[test]
    fn p_value_falls_as_means_separate(a in sample(3..10), b in sample(3..10), d1 in 0.0f64..5.0, d2 in 0.0f64..5.0) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let base = welch_t_test(&a, &b).unwrap();
        prop_assume!(base.t.is_finite());
        // Shifting `a` away from `b` in the direction it already leans.
        let dir = if base.t >= 0.0 { 1.0 } else { -1.0 };
        let shifted = |d: f64| a.iter().map(|x| x + dir * d).collect::<Vec<_>>();
        let p_lo = welch_t_test(&shifted(lo), &b).unwrap().p;
        let p_hi = welch_t_test(&shifted(hi), &b).unwrap().p;
        prop_assert!(p_hi <= p_lo + 1e-12, "{} > {}", p_hi, p_lo);
    }
}
