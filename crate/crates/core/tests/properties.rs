mod common;

use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::{digamma as sr_digamma, gamma, ln_gamma as sr_ln_gamma};

use bndl::data::Matrix;
use bndl::distributions::{
    kl_weibull_gamma, open_uniform, weibull_sample, GammaParams, WeibullParams,
};
use bndl::model::{init_model, Dims};
use bndl::numkernel::{
    digamma, log_gamma, normalize_nonneg, regularized_incomplete_beta, student_t_two_sided_p,
};
use bndl::rng::run_stream;
use bndl::uncertainty::{mc_scores, p_value_top2};

use common::kl_quadrature;

fn kl(k: f64, l: f64, a: f64, b: f64) -> f64 {
    kl_weibull_gamma(
        WeibullParams::new(k, l).unwrap(),
        GammaParams::new(a, b).unwrap(),
    )
}

fn statrs_two_sided(t: f64, dof: f64) -> f64 {
    2.0 * (1.0 - StudentsT::new(0.0, 1.0, dof).unwrap().cdf(t.abs()))
}

#[test]
fn quadrature_oracle_reproduces_hand_value() {
    let want = 1.0 - std::f64::consts::LN_2;
    assert!((kl_quadrature(1.0, 2.0, 1.0, 1.0) - want).abs() < 1e-9);
    assert!((kl(1.0, 2.0, 1.0, 1.0) - want).abs() < 1e-6);
    assert!((kl(2.0, 1.0, 1.0, 1.0) - kl_quadrature(2.0, 1.0, 1.0, 1.0)).abs() < 1e-6);
}

#[test]
fn weibull_sample_matches_closed_form() {
    let x = weibull_sample(WeibullParams::new(2.0, 3.0).unwrap(), 0.9).unwrap();
    assert!((x - 3.0 * 10f64.ln().sqrt()).abs() < 1e-12);
    assert!((x - 4.55229).abs() < 1e-5);
}

#[test]
fn weibull_draws_have_gamma_mean() {
    let w = WeibullParams::new(2.0, 1.0).unwrap();
    let n = 100_000;
    let mut rng = run_stream(77, 0);
    let mut s = 0.0;
    for _ in 0..n {
        s += weibull_sample(w, open_uniform(&mut rng)).unwrap();
    }
    let mean = gamma(1.5);
    let sd = (gamma(2.0) - mean * mean).sqrt();
    assert!((s / n as f64 - mean).abs() < 4.0 * sd / (n as f64).sqrt());
}

#[test]
fn student_t_matches_table_value() {
    let p = student_t_two_sided_p(2.086, 20.0).unwrap();
    assert!((p - 0.05).abs() < 1e-4, "{p}");
    assert!((p - statrs_two_sided(2.086, 20.0)).abs() < 1e-10);
}

#[test]
fn welch_example_matches_statistics_oracle() {
    // Columns with means 1.0 and 0.5 and unbiased variance 0.04 each.
    let s = 20;
    let c = 0.2 * (19.0f64 / 20.0).sqrt();
    let scores = Matrix::from_fn(s, 3, |i, j| {
        let z = if i % 2 == 0 { 1.0 } else { -1.0 };
        match j {
            0 => 0.5 + c * z,
            1 => 1.0 - c * z,
            _ => 0.1,
        }
    });
    let (top, p) = p_value_top2(&scores).unwrap();
    assert_eq!(top, 1);
    let t = 0.5 / (2.0 * 0.04 / 20.0f64).sqrt();
    let want = statrs_two_sided(t, 38.0);
    assert!((p - want).abs() < 1e-6, "{p} vs {want}");
}

#[test]
fn mc_score_means_match_expectation_product() {
    let dims = Dims::new(5, 4, 3).unwrap();
    for seed in 0..5 {
        let p = init_model(dims, 0.0, seed).unwrap();
        let h: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.4).collect();
        let expected = p.expected_forward(&h).unwrap().raw_scores;
        let scores = mc_scores(&p, &h, 20, &mut run_stream(seed, 9)).unwrap();
        for (j, want) in expected.iter().enumerate() {
            let col = scores.column(j);
            let m = col.iter().sum::<f64>() / 20.0;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 19.0).sqrt();
            assert!(
                (m - want).abs() <= 4.0 * sd / 20f64.sqrt(),
                "seed {seed} class {j}"
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn incomplete_beta_symmetry(a in 0.1f64..20.0, b in 0.1f64..20.0, x in 0.001f64..0.999) {
        let l = regularized_incomplete_beta(a, b, x).unwrap();
        let r = regularized_incomplete_beta(b, a, 1.0 - x).unwrap();
        prop_assert!((l + r - 1.0).abs() < 1e-10);
        prop_assert!((l - beta_reg(a, b, x)).abs() < 1e-9);
    }

    #[test]
    fn special_functions_match_statrs(x in 0.01f64..50.0) {
        let lg = log_gamma(x).unwrap();
        prop_assert!((lg - sr_ln_gamma(x)).abs() <= 1e-10 * lg.abs().max(1.0));
        let dg = digamma(x).unwrap();
        prop_assert!((dg - sr_digamma(x)).abs() <= 1e-10 * dg.abs().max(1.0));
    }

    #[test]
    fn student_t_matches_statrs(t in -30.0f64..30.0, dof in 0.5f64..200.0) {
        let p = student_t_two_sided_p(t, dof).unwrap();
        prop_assert!((p - statrs_two_sided(t, dof)).abs() < 1e-9);
    }

    #[test]
    fn normalize_is_scale_invariant(u in prop::collection::vec(0.0f64..10.0, 1..8), c in 0.01f64..100.0) {
        prop_assume!(u.iter().sum::<f64>() > 1e-6);
        let a = normalize_nonneg(&u, 0.0).unwrap();
        let scaled: Vec<f64> = u.iter().map(|v| v * c).collect();
        let b = normalize_nonneg(&scaled, 0.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_is_non_negative(k in 0.05f64..20.0, l in 0.01f64..50.0, a in 0.1f64..10.0, b in 0.1f64..10.0) {
        prop_assert!(kl(k, l, a, b) >= -1e-12);
    }

    #[test]
    fn p_value_invariances(
        vals in prop::collection::vec(0.0f64..5.0, 12),
        shift in -3.0f64..3.0,
        scale in 0.1f64..10.0,
    ) {
        let scores = Matrix::from_vec(4, 3, vals).unwrap();
        let (top, p) = p_value_top2(&scores).unwrap();
        let moved = Matrix::from_fn(4, 3, |i, j| scale * scores.get(i, j) + shift);
        let (top2, p2) = p_value_top2(&moved).unwrap();
        prop_assert_eq!(top, top2);
        prop_assert!((p - p2).abs() < 1e-9);
        let flipped = Matrix::from_fn(4, 3, |i, j| scores.get(3 - i, j));
        let (top3, p3) = p_value_top2(&flipped).unwrap();
        prop_assert_eq!(top, top3);
        prop_assert_eq!(p, p3);
        prop_assert!((0.0..=1.0).contains(&p));
    }
}
