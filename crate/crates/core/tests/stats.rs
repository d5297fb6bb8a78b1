mod common;

use feratt::evaluation::stats::{
    bonferroni_dunn_posthoc, chi_square_sf, critical_difference, friedman_test, gamma_q, ln_gamma, nemenyi_posthoc,
    normal_cdf, normal_sf, PValueMethod, PostHoc,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

#[test]
fn friedman_nemenyi_and_permutation_oracle() {
    println!("{}", common::statistical_tests().unwrap());
}

#[test]
fn special_functions_match_statrs() {
    for &x in &[0.1, 0.5, 1.0, 2.5, 7.0, 33.3, 170.5] {
        let expected = statrs::function::gamma::ln_gamma(x);
        assert!((ln_gamma(x) - expected).abs() < 1e-10 * expected.abs().max(1.0), "ln_gamma({x})");
    }
    for &a in &[0.5, 1.0, 1.5, 4.0, 12.0] {
        for &x in &[0.01, 0.3, 1.0, 3.0, 9.0, 40.0] {
            let expected = statrs::function::gamma::gamma_ur(a, x);
            assert!((gamma_q(a, x) - expected).abs() < 1e-10, "Q({a}, {x})");
        }
    }
    for dof in 1..=9 {
        let chi = ChiSquared::new(dof as f64).unwrap();
        for &s in &[0.0, 0.4, 1.0, 3.84, 7.5, 20.0, 60.0] {
            let expected = chi.sf(s);
            assert!((chi_square_sf(s, dof as f64) - expected).abs() < 1e-10, "chi2 sf({s}, {dof})");
        }
    }
    let normal = Normal::standard();
    for &x in &[-6.0, -2.5, -1.0, 0.0, 0.3, 1.96, 4.0, 8.0] {
        assert!((normal_cdf(x) - normal.cdf(x)).abs() < 1e-10, "Φ({x})");
        assert!((normal_sf(x) - normal.sf(x)).abs() < 1e-10, "1 − Φ({x})");
    }
    for (x, phi) in [(-1.0, 0.158_655_253_931_457_05), (1.959_963_984_540_054, 0.975), (-3.0, 0.001_349_898_031_630_094_6)] {
        assert!((normal_cdf(x) - phi).abs() < 1e-15, "tabulated Φ({x})");
    }
}

#[test]
fn critical_difference_and_control_comparisons() {
    let cd = critical_difference(3, 10, 0.05).unwrap();
    assert!((cd - 1.0478).abs() < 1e-3);

    let PostHoc::BonferroniDunn { z, p_uncorrected, p_values, control, .. } =
        bonferroni_dunn_posthoc(&[1.0, 2.0, 3.0], 10, 0, 0.05).unwrap()
    else {
        panic!("wrong post-hoc variant");
    };
    assert_eq!(control, 0);
    assert!((z[1] - 2.2361).abs() < 1e-4);
    assert!((p_uncorrected[1] - 0.0127).abs() < 1e-4);
    assert!((p_values[1] - 0.0253).abs() < 1e-4);
    assert_eq!(p_values[0], 1.0);

    let PostHoc::Nemenyi { significant, critical_difference: cd2, .. } = nemenyi_posthoc(&[1.0, 2.0, 3.0], 10, 0.05).unwrap()
    else {
        panic!("wrong post-hoc variant");
    };
    assert_eq!(cd, cd2);
    assert!(significant[0][2] && !significant[0][1] && !significant[1][2]);
}

#[test]
fn large_problems_fall_back_to_chi_square() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows = common::random_scores(&mut rng, 60, 7, 0.1);
    let r = friedman_test(&rows).unwrap();
    assert_eq!(r.p_value_method, PValueMethod::ChiSquare);
    assert_eq!(r.p_value, r.p_value_chi_square);
}
