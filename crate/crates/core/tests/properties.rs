use iccv_core::calib::{elicitation_bounds, matched_pairs_sd_bounds, MatchedPairsStudy};
use iccv_core::dist::{norm_cdf, std_normal_cdf, std_normal_quantile};
use iccv_core::priors::{posterior_scalar, rejection_prob, rejection_prob_quadrature, Prior, Tail};
use iccv_core::solver::size_closed_form_iid;
use proptest::prelude::*;

fn prior_strategy() -> impl Strategy<Value = Prior> {
    prop_oneof![
        (-4.0..4.0f64).prop_map(|t| Prior::point_mass(t).unwrap()),
        (-4.0..3.0f64, 0.01..4.0f64).prop_map(|(lo, w)| Prior::uniform(lo, lo + w).unwrap()),
        (-4.0..4.0f64, 0.05..3.0f64).prop_map(|(m, s)| Prior::normal(m, s).unwrap()),
    ]
}

fn tail_strategy() -> impl Strategy<Value = Tail> {
    prop_oneof![Just(Tail::TwoSided), Just(Tail::UpperOneSided)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cdf_is_symmetric(x in -40.0..40.0f64) {
        let s = std_normal_cdf(x).unwrap().value() + std_normal_cdf(-x).unwrap().value();
        prop_assert!((s - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf_on_the_lower_half(x in -8.0..0.0f64) {
        let back = std_normal_quantile(norm_cdf(x)).unwrap();
        prop_assert!((back - x).abs() <= 1e-8, "{x} -> {back}");
    }

    #[test]
    fn two_sided_dominates_one_sided(prior in prior_strategy(), z in 0.0..8.0f64) {
        let two = rejection_prob(&prior, z, Tail::TwoSided).unwrap();
        let one = rejection_prob(&prior, z, Tail::UpperOneSided).unwrap();
        prop_assert!(two >= one);
    }

    #[test]
    fn rejection_prob_strictly_decreasing(prior in prior_strategy(), tail in tail_strategy()) {
        let r: Vec<f64> = (0..=80).map(|k| rejection_prob(&prior, 0.1 * k as f64, tail).unwrap().value()).collect();
        for (k, w) in r.windows(2).enumerate() {
            prop_assert!(w[1] < w[0], "{prior:?} {tail:?} at z = {}: {} !< {}", 0.1 * k as f64, w[1], w[0]);
        }
    }

    #[test]
    fn closed_form_matches_quadrature(prior in prior_strategy(), tail in tail_strategy(), z in 0.0..6.0f64) {
        let cf = rejection_prob(&prior, z, tail).unwrap().value();
        let q = rejection_prob_quadrature(&prior, z, tail).unwrap().value();
        prop_assert!((cf - q).abs() <= 1e-8, "{cf} vs {q}");
    }

    #[test]
    fn normal_prior_formula(mean in -4.0..4.0f64, sd in 0.01..3.0f64, z in 0.0..6.0f64) {
        let prior = Prior::normal(mean, sd).unwrap();
        let s = (1.0 + sd * sd).sqrt();
        let expected = 1.0 - norm_cdf((z - mean) / s) + norm_cdf((-z - mean) / s);
        let got = rejection_prob(&prior, z, Tail::TwoSided).unwrap().value();
        prop_assert!((got - expected).abs() <= 1e-14);
    }

    #[test]
    fn posterior_contracts_and_averages(
        mean in -3.0..3.0f64,
        sd in 0.05..3.0f64,
        obs in proptest::collection::vec(-5.0..5.0f64, 1..30),
    ) {
        let prior = Prior::normal(mean, sd).unwrap();
        let mut last = sd * sd;
        for n in 1..=obs.len() {
            let p = posterior_scalar(&prior, &obs[..n]).unwrap();
            prop_assert!(p.variance < last);
            prop_assert!((p.variance - sd * sd / (n as f64 * sd * sd + 1.0)).abs() <= 1e-15);
            last = p.variance;
            let xbar = obs[..n].iter().sum::<f64>() / n as f64;
            prop_assert!(p.mean >= xbar.min(mean) - 1e-12 && p.mean <= xbar.max(mean) + 1e-12);
        }
        let far = posterior_scalar(&prior, &vec![0.0; 1_000_000]).unwrap();
        prop_assert!(far.variance < 1e-6);
    }

    #[test]
    // Smaller z or larger n round the size to exactly 1.
    fn iid_size_increases_in_n_decreases_in_z(z in 1.0..5.0f64, n in 1usize..30, tail in tail_strategy()) {
        let s = |z: f64, n: usize| size_closed_form_iid(z, n, tail).unwrap().value();
        prop_assert!(s(z, n + 1) > s(z, n));
        prop_assert!(s(z + 0.1, n) < s(z, n));
    }

    #[test]
    fn elicitation_bounds_decrease(n_bar in 1u64..40, z in 0.5..4.0f64, mean in 0.0..3.0f64, sd in 0.1..2.0f64) {
        let prior = Prior::normal(mean, sd).unwrap();
        let (lo, up) = elicitation_bounds(n_bar, z, &prior).unwrap();
        let (lo_next, up_next) = elicitation_bounds(n_bar + 1, z, &prior).unwrap();
        prop_assert_eq!(up_next, lo);
        prop_assert!(lo < up && lo_next < lo);
        let (lo_z, up_z) = elicitation_bounds(n_bar, z + 0.1, &prior).unwrap();
        prop_assert!(lo_z < lo && up_z < up);
    }

    #[test]
    fn sd_bounds_contain_every_table(
        (n, a, b, c) in (2u64..40)
            .prop_flat_map(|n| (Just(n), 0..=n))
            .prop_flat_map(|(n, a)| (Just(n), Just(a), 0..=n - a))
            .prop_flat_map(|(n, a, b)| (Just(n), Just(a), Just(b), 0..=n - a - b)),
    ) {
        // a (1,1) pairs, b (1,0) pairs, c (0,1) pairs and the rest (0,0).
        let (sx, sy) = (a + b, a + c);
        let nf = n as f64;
        let beta = (b as f64 - c as f64) / nf;
        let sd = (((b + c) as f64 - nf * beta * beta) / (nf - 1.0)).max(0.0).sqrt();
        let bounds = matched_pairs_sd_bounds(&MatchedPairsStudy::new(n, sx, sy).unwrap()).unwrap();
        prop_assert!(sd >= bounds.sd_lb - 1e-12 && sd <= bounds.sd_ub + 1e-12);
        prop_assert!(bounds.sd_lb <= bounds.sd_mid && bounds.sd_mid <= bounds.sd_ub);
    }
}

#[test]
fn elicitation_bounds_approach_classical_size() {
    let prior = Prior::normal(1.99, 0.4).unwrap();
    let (lo, up) = elicitation_bounds(100_000, 1.96, &prior).unwrap();
    assert!(up.value() < 0.051 && lo.value() < up.value());
    let (lo, _) = elicitation_bounds(1_000_000_000, 1.96, &prior).unwrap();
    // The null part of the pooled statistic keeps a 5% floor; the signal part vanishes.
    assert!((lo.value() - 0.05).abs() < 1e-3);
}
