use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use duality_core::diagnostics::{
    concavity_probe, duality_gap, duality_suite, functional_f, information_equality_check, kl_lower_bound,
    squash_pointwise_check, squashing_constant, trial_passes, DualityFamily, DualityProblem,
};
use duality_core::oracles::{
    conditional_entropy_quadrature_2d, kl_quadrature_1d, log_normalizer_1d, marginal_entropy_quadrature_2d,
    mutual_information_quadrature_2d, random_discrete_target, random_gaussian_target, simpson,
};
use duality_core::quadrature::{BlockGrid, Rule1d};
use duality_core::{cavi_run, CaviConfig, CaviInit, Factor, GaussianFactor, GaussianTarget, UpdatePath};
use proptest::prelude::*;

fn log_normal(x: f64, m: f64, v: f64) -> f64 {
    -0.5 * (2.0 * PI * v).ln() - (x - m).powi(2) / (2.0 * v)
}

fn gauss(m: f64, v: f64) -> Factor {
    Factor::Gaussian(GaussianFactor::univariate(m, v).unwrap())
}

fn wide_grid() -> BlockGrid {
    BlockGrid::one_dimensional(Rule1d::trapezoid(-12.0, 12.0, 4097).unwrap())
}

#[test]
fn duality_gap_worked_examples() {
    let at_tilt = DualityProblem::from_fns(
        wide_grid(),
        |x| log_normal(x[0], 0.0, 1.0),
        |x| -0.5 * x[0] * x[0],
        |x| log_normal(x[0], 0.0, 0.5),
        true,
    )
    .unwrap();
    assert_abs_diff_eq!(duality_gap(&at_tilt).unwrap(), 0.0, epsilon = 1e-8);

    let off = DualityProblem::from_fns(
        wide_grid(),
        |x| log_normal(x[0], 0.0, 1.0),
        |x| -0.5 * x[0] * x[0],
        |x| log_normal(x[0], 0.0, 1.0),
        true,
    )
    .unwrap();
    let lhs = log_normalizer_1d(|x| log_normal(x, 0.0, 1.0) - 0.5 * x * x, -12.0, 12.0);
    let eq_h = simpson(|x| log_normal(x, 0.0, 1.0).exp() * (-0.5 * x * x), -12.0, 12.0, 20_000);
    let oracle = lhs - eq_h;
    assert_abs_diff_eq!(duality_gap(&off).unwrap(), oracle, epsilon = 1e-9);
    assert_abs_diff_eq!(oracle, 0.5 * (1.0 - 2f64.ln()), epsilon = 1e-9);

    let constant = DualityProblem::from_fns(
        wide_grid(),
        |x| log_normal(x[0], 0.0, 1.0),
        |_| 2.5,
        |x| log_normal(x[0], 1.0, 2.0),
        true,
    )
    .unwrap();
    let kl = kl_quadrature_1d(
        &GaussianFactor::univariate(1.0, 2.0).unwrap(),
        &GaussianFactor::univariate(0.0, 1.0).unwrap(),
    );
    assert_abs_diff_eq!(duality_gap(&constant).unwrap(), kl, epsilon = 1e-9);
}

#[test]
fn randomized_duality_suites() {
    for family in [DualityFamily::Gaussian, DualityFamily::Discrete] {
        let trials = duality_suite(family, 100, 7).unwrap();
        assert_eq!(trials.len(), 200);
        for t in &trials {
            assert!(trial_passes(t), "{t:?}");
        }
    }
}

#[test]
fn functional_at_worked_point() {
    let t = GaussianTarget::standard_bivariate(0.5).unwrap();
    let theta = [0.0, 1.0];
    let q = GaussianFactor::univariate(0.5, 0.75).unwrap();
    let f = functional_f(&t, 0, &theta, &Factor::Gaussian(q.clone()), 4097).unwrap();
    let e_log_cond = simpson(
        |x| log_normal(x, 0.5, 0.75).exp() * log_normal(1.0, 0.5 * x, 0.75),
        -10.0,
        11.0,
        20_000,
    );
    let kl = kl_quadrature_1d(&q, &GaussianFactor::univariate(0.0, 1.0).unwrap());
    assert_abs_diff_eq!(f, e_log_cond - kl, epsilon = 1e-8);
    assert_abs_diff_eq!(f, -(2.0 * PI).sqrt().ln() - 0.5, epsilon = 1e-8);
    assert_abs_diff_eq!(f, -1.41894, epsilon = 1e-5);
}

#[test]
fn concavity_slack_matches_quadrature() {
    let t = GaussianTarget::standard_bivariate(0.5).unwrap();
    let theta = [0.0, 0.3];
    let slack = concavity_probe(&t, 0, &theta, &gauss(0.0, 1.0), &gauss(1.0, 0.5), 0.5, 4097).unwrap();
    // F(r) = ∫ r (log π(θ₂|θ₁) + log π(θ₁) − log r) for a density r on θ₁.
    let f = |r: &dyn Fn(f64) -> f64| {
        simpson(
            |x| {
                let d = r(x);
                if d == 0.0 {
                    0.0
                } else {
                    d * (log_normal(0.3, 0.5 * x, 0.75) + log_normal(x, 0.0, 1.0) - d.ln())
                }
            },
            -12.0,
            12.0,
            20_000,
        )
    };
    let p = |x: f64| log_normal(x, 0.0, 1.0).exp();
    let q = |x: f64| log_normal(x, 1.0, 0.5).exp();
    let mix = |x: f64| 0.5 * p(x) + 0.5 * q(x);
    let oracle = f(&mix) - 0.5 * f(&p) - 0.5 * f(&q);
    assert!(slack >= 0.0);
    assert_abs_diff_eq!(slack, oracle, epsilon = 1e-8);
}

#[test]
fn information_terms_match_quadrature_oracles() {
    let t = GaussianTarget::standard_bivariate(0.5).unwrap();
    let r = information_equality_check(&t, 0, 513).unwrap();
    assert_abs_diff_eq!(r.mutual_information, mutual_information_quadrature_2d(&t), epsilon = 1e-8);
    assert_abs_diff_eq!(r.entropy_complement, marginal_entropy_quadrature_2d(&t, 1), epsilon = 1e-8);
    assert_abs_diff_eq!(r.cond_entropy_complement, conditional_entropy_quadrature_2d(&t, 0), epsilon = 1e-8);
    assert_abs_diff_eq!(r.mutual_information, 0.143841, epsilon = 1e-6);
    assert_abs_diff_eq!(r.entropy_complement, 1.418939, epsilon = 1e-6);
    assert_abs_diff_eq!(r.cond_entropy_complement, 1.275098, epsilon = 1e-6);
}

/// `log ∫ exp E_{q_other}[log π(θ_this | θ_other)] dθ_this` for a bivariate
/// standard target, by nested Simpson quadrature.
fn nested_log_numerator(rho: f64, other_var: f64) -> f64 {
    let sd = other_var.sqrt();
    let inner = |x: f64| {
        simpson(
            |y| log_normal(y, 0.0, other_var).exp() * log_normal(x, rho * y, 1.0 - rho * rho),
            -12.0 * sd,
            12.0 * sd,
            400,
        )
    };
    log_normalizer_1d(inner, -12.0, 12.0)
}

#[test]
fn squashing_constant_and_kl_bound_at_rho_half() {
    let t = GaussianTarget::standard_bivariate(0.5).unwrap();
    let s = cavi_run(&t, &CaviConfig::new(200, 1e-12)).unwrap();
    let r = squashing_constant(&t, &s.factors, 0, 513).unwrap();
    let numerator = nested_log_numerator(0.5, 0.75);
    let denominator = kl_quadrature_1d(
        &GaussianFactor::univariate(0.0, 0.75).unwrap(),
        &GaussianFactor::univariate(0.0, 1.0).unwrap(),
    );
    assert_abs_diff_eq!(r.r, (numerator - denominator).exp(), epsilon = 1e-6);
    assert_abs_diff_eq!(r.r, 0.866025, epsilon = 1e-6);
    assert!(r.r > 0.0 && r.r <= 1.0 + 1e-10);

    let slack = squash_pointwise_check(&t, &s.factors, 0, r.r, 1001).unwrap();
    assert!(slack >= -1e-12, "{slack}");

    let b = kl_lower_bound(&t, &s.factors, 0, 513).unwrap();
    assert_abs_diff_eq!(b.raw, numerator, epsilon = 1e-8);
    assert_abs_diff_eq!(b.raw, -0.125, epsilon = 1e-8);
    assert_eq!(b.bound, 0.0);
    assert_abs_diff_eq!(b.kl, denominator, epsilon = 1e-9);
    assert_abs_diff_eq!(b.kl, 0.018841, epsilon = 1e-6);
}

#[test]
fn generic_path_squashing_agrees_with_analytic_path() {
    let t = GaussianTarget::standard_bivariate(0.5).unwrap();
    let mut cfg = CaviConfig::new(200, 1e-10);
    cfg.path = UpdatePath::Grid { points: 513 };
    cfg.init = CaviInit::StandardNormal;
    let s = cavi_run(&t, &cfg).unwrap();
    assert!(s.converged);
    let r = squashing_constant(&t, &s.factors, 0, 513).unwrap();
    assert_abs_diff_eq!(r.r, 0.75f64.sqrt(), epsilon = 1e-6);
    let b = kl_lower_bound(&t, &s.factors, 0, 513).unwrap();
    assert_abs_diff_eq!(b.kl, 0.5 * (-0.25 - 0.75f64.ln()), epsilon = 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn discrete_squashing_and_kl_bound(seed in 0u64..1_000_000, a in 2usize..6, b in 2usize..6) {
        let t = random_discrete_target(&[a, b], seed);
        let s = cavi_run(&t, &CaviConfig::new(5_000, 1e-13)).unwrap();
        prop_assert!(s.converged);
        for blk in 0..2 {
            let r = squashing_constant(&t, &s.factors, blk, 0).unwrap();
            prop_assert!(r.r > 0.0 && r.r <= 1.0 + 1e-10);
            prop_assert!(squash_pointwise_check(&t, &s.factors, blk, r.r, 0).unwrap() >= -1e-12);
            let kb = kl_lower_bound(&t, &s.factors, blk, 0).unwrap();
            prop_assert!(kb.raw <= 1e-10);
            prop_assert!(kb.kl >= 0.0 && kb.kl >= kb.bound - 1e-10);
        }
    }

    #[test]
    fn discrete_information_equality(seed in 0u64..1_000_000) {
        let t = random_discrete_target(&[3, 2, 4], seed);
        for blk in 0..3 {
            let r = information_equality_check(&t, blk, 0).unwrap();
            prop_assert!(r.residual <= 1e-12 && r.symmetric_residual <= 1e-12);
        }
    }
}

#[test]
fn gaussian_information_equality_on_random_targets() {
    for seed in 0..4 {
        let t = random_gaussian_target(&[1, 1], seed);
        for blk in 0..2 {
            let r = information_equality_check(&t, blk, 513).unwrap();
            assert!(r.residual <= 1e-8 && r.symmetric_residual <= 1e-8, "{r:?}");
        }
        let s = cavi_run(&t, &CaviConfig::new(500, 1e-12)).unwrap();
        for blk in 0..2 {
            let r = squashing_constant(&t, &s.factors, blk, 513).unwrap();
            assert!(r.r > 0.0 && r.r <= 1.0 + 1e-10);
            assert!(squash_pointwise_check(&t, &s.factors, blk, r.r, 1001).unwrap() >= -1e-10);
        }
    }
}
