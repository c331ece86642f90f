use chrono::{Days, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::linalg::SpdMatrix;
use crate::market_model::{CovarianceModel, DriftParams, MeteoMatrix, PriceDiffVector};

fn date(i: usize) -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 1, 1).unwrap() + Days::new(i as u64)
}

fn obs(day: usize, weather: DMatrix<f64>, prices: Vec<f64>) -> Observation {
    Observation::new(
        MeteoMatrix::new(date(day), 12, weather).unwrap(),
        PriceDiffVector::new(date(day), 12, DVector::from_vec(prices)).unwrap(),
    )
    .unwrap()
}

fn random_fixture(rng: &mut ChaCha8Rng, n: usize, k: usize, days: usize) -> Vec<Observation> {
    (0..days)
        .map(|t| {
            let w = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let f = (0..n)
                .map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            obs(t, w, f)
        })
        .collect()
}

fn random_drift(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DriftParams {
    DriftParams::new(DMatrix::from_fn(n, k + 1, |_, _| {
        0.2 * rng.sample::<f64, _>(StandardNormal)
    }))
    .unwrap()
}

/// Multivariate normal log-density through LU inverse and determinant.
fn dense_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = x.len() as f64;
    let inv = cov.clone().try_inverse().unwrap();
    let d = x - mean;
    let quad = (d.transpose() * inv * &d)[(0, 0)];
    -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * cov.determinant().ln() - 0.5 * quad
}

fn unit_cov(n: usize) -> CovarianceModel {
    CovarianceModel::new(DMatrix::identity(n, n), 0.0).unwrap()
}

#[test]
fn standard_normal_at_mean() {
    let data = vec![obs(0, DMatrix::zeros(1, 0), vec![0.7])];
    let drift = DriftParams::new(DMatrix::from_element(1, 1, 0.7)).unwrap();
    let phi = ParamVector::drift_only(&drift, unit_cov(1)).unwrap();
    let h = log_likelihood(&phi, &data).unwrap();
    assert!((h + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
}

#[test]
fn univariate_density_formula() {
    let (r, s) = (0.3, 0.25);
    let data = vec![obs(0, DMatrix::zeros(1, 0), vec![r])];
    let cov = CovarianceModel::new(DMatrix::from_element(1, 1, s), 0.0).unwrap();
    let phi = ParamVector::drift_only(&DriftParams::zeros(1, 0), cov).unwrap();
    let expected = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * s.ln() - r * r / (2.0 * s);
    assert!((log_likelihood(&phi, &data).unwrap() - expected).abs() < 1e-14);
}

#[test]
fn likelihood_matches_dense_density_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let data = random_fixture(&mut rng, 2, 2, 3);
    let drift = random_drift(&mut rng, 2, 2);
    let sigma = DMatrix::from_row_slice(2, 2, &[0.09, 0.02, 0.02, 0.05]);
    let phi = ParamVector::with_cholesky(&drift, &SpdMatrix::new(sigma.clone()).unwrap()).unwrap();
    let oracle: f64 = data
        .iter()
        .map(|o| {
            dense_log_density(
                o.prices.values(),
                &drift.evaluate(&o.weather).unwrap(),
                &sigma,
            )
        })
        .sum();
    let h = log_likelihood(&phi, &data).unwrap();
    assert!(((h - oracle) / oracle).abs() < 1e-10, "{h} vs {oracle}");
}

#[test]
fn likelihood_is_order_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = random_fixture(&mut rng, 3, 2, 40);
    let phi = ParamVector::drift_only(&random_drift(&mut rng, 3, 2), unit_cov(3)).unwrap();
    let mut shuffled = data.clone();
    shuffled.reverse();
    shuffled.swap(3, 17);
    let a = log_likelihood(&phi, &data).unwrap();
    let b = log_likelihood(&phi, &shuffled).unwrap();
    assert!(((a - b) / a).abs() < 1e-12);
}

#[test]
fn non_spd_fixed_covariance_is_rejected_up_front() {
    let bad = CovarianceModel::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), 0.0);
    assert!(matches!(bad, Err(Error::NotPositiveDefinite { .. })));
}

#[test]
fn zero_residual_gradient_vanishes_for_drift_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let drift = random_drift(&mut rng, 2, 3);
    let data: Vec<_> = (0..6)
        .map(|t| {
            let w = DMatrix::from_fn(2, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let f = drift
                .evaluate(&MeteoMatrix::new(date(t), 12, w.clone()).unwrap())
                .unwrap();
            obs(t, w, f.iter().copied().collect())
        })
        .collect();
    let phi = ParamVector::drift_only(&drift, unit_cov(2)).unwrap();
    let g = likelihood_gradient(&phi, &data).unwrap();
    assert!(g.sup_norm() < 1e-14, "{}", g.sup_norm());
}

#[test]
fn log_variance_derivative_with_zero_residuals() {
    // Σ = e^{2ψ}: ∂H/∂ψ = −½·T·e^{−2ψ}·2e^{2ψ} = −T.
    let days = 7;
    let data: Vec<_> = (0..days)
        .map(|t| obs(t, DMatrix::zeros(1, 0), vec![0.0]))
        .collect();
    let psi = -0.4_f64;
    let sigma = SpdMatrix::new(DMatrix::from_element(1, 1, (2.0 * psi).exp())).unwrap();
    let phi = ParamVector::with_cholesky(&DriftParams::zeros(1, 0), &sigma).unwrap();
    assert!((phi.values()[1] - psi).abs() < 1e-15);
    let g = likelihood_gradient(&phi, &data).unwrap();
    assert!(
        (g.values()[1] + days as f64).abs() < 1e-12,
        "{}",
        g.values()[1]
    );
}

#[test]
fn gradient_agrees_with_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (n, k, days) in [(1, 1, 10), (2, 3, 25), (3, 2, 50), (3, 0, 15)] {
        let data = random_fixture(&mut rng, n, k, days);
        let drift = random_drift(&mut rng, n, k);
        let mut l = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            l[(i, i)] = 0.3 + 0.4 * rng.random::<f64>();
            for j in 0..i {
                l[(i, j)] = 0.1 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let sigma = SpdMatrix::new(&l * l.transpose()).unwrap();
        for phi in [
            ParamVector::with_cholesky(&drift, &sigma).unwrap(),
            ParamVector::drift_only(
                &drift,
                CovarianceModel::new(sigma.matrix().clone(), 0.0).unwrap(),
            )
            .unwrap(),
        ] {
            let check = check_gradient(&phi, &data).unwrap();
            assert!(check.max_relative_error <= 1e-6, "n={n} k={k}: {check:?}");
        }
    }
}

#[test]
fn corrupted_gradient_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = random_fixture(&mut rng, 2, 1, 20);
    let phi =
        ParamVector::with_cholesky(&random_drift(&mut rng, 2, 1), &SpdMatrix::identity(2)).unwrap();
    let check = check_gradient_with(&phi, &data, |p, o| {
        let g = likelihood_gradient(p, o)?;
        let mut v = g.values().clone();
        v[0] *= 1.01;
        g.with_values(v)
    })
    .unwrap();
    assert!(check.max_relative_error > 1e-3);
}

fn linear_fixture(
    rng: &mut ChaCha8Rng,
    truth: &DriftParams,
    days: usize,
    noise: f64,
) -> Vec<Observation> {
    let (n, k) = (truth.nodes(), truth.variables());
    (0..days)
        .map(|t| {
            let w = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let b = truth
                .evaluate(&MeteoMatrix::new(date(t), 12, w.clone()).unwrap())
                .unwrap();
            let f = b
                .iter()
                .map(|x| x + noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            obs(t, w, f)
        })
        .collect()
}

#[test]
fn ols_constant_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data: Vec<_> = (0..30)
        .map(|t| {
            let w = DMatrix::from_fn(2, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
            obs(t, w, vec![0.04, -0.01])
        })
        .collect();
    let drift = fit_ols(&data).unwrap();
    let c = drift.coefficients();
    assert!((c[(0, 0)] - 0.04).abs() < 1e-14 && (c[(1, 0)] + 0.01).abs() < 1e-14);
    for i in 0..2 {
        for j in 1..3 {
            assert!(c[(i, j)].abs() < 1e-14);
        }
    }
}

#[test]
fn ols_recovers_exact_linear_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = random_drift(&mut rng, 3, 3);
    let data = linear_fixture(&mut rng, &truth, 20, 0.0);
    let fitted = fit_ols(&data).unwrap();
    assert!((fitted.coefficients() - truth.coefficients()).amax() < 1e-10);
}

#[test]
fn ols_rejects_singular_design() {
    let data: Vec<_> = (0..10)
        .map(|t| obs(t, DMatrix::from_element(1, 1, 5.0), vec![t as f64]))
        .collect();
    assert!(matches!(fit_ols(&data), Err(Error::SingularDesign { .. })));
    let short: Vec<_> = (0..2)
        .map(|t| {
            obs(
                t,
                DMatrix::from_row_slice(1, 2, &[t as f64, 1.0]),
                vec![0.0],
            )
        })
        .collect();
    assert!(matches!(fit_ols(&short), Err(Error::SingularDesign { .. })));
}

#[test]
fn ols_is_stationary_under_diagonal_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let truth = random_drift(&mut rng, 3, 2);
    let data = linear_fixture(&mut rng, &truth, 200, 0.1);
    let drift = fit_ols(&data).unwrap();
    let cov = CovarianceModel::new(
        DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 0.02, 0.015])),
        0.0,
    )
    .unwrap();
    let g = likelihood_gradient(&ParamVector::drift_only(&drift, cov).unwrap(), &data).unwrap();
    assert!(g.sup_norm() <= 1e-8 * data.len() as f64, "{}", g.sup_norm());
}

#[test]
fn ascent_from_ols_stops_immediately() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let truth = random_drift(&mut rng, 2, 2);
    let data = linear_fixture(&mut rng, &truth, 120, 0.2);
    let phi0 = initial_params(&data, CovarianceMode::Fixed, Initialization::Ols, 60).unwrap();
    let cfg = EstimatorConfig::for_sample_size(data.len());
    let fit = fit_gradient_ascent(&phi0, &data, &cfg).unwrap();
    assert!(
        fit.converged && fit.iterations <= 2,
        "{} iterations",
        fit.iterations
    );
}

#[test]
fn ascent_from_zero_matches_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let truth = random_drift(&mut rng, 3, 3);
    let data = linear_fixture(&mut rng, &truth, 300, 0.1);
    let phi0 = initial_params(&data, CovarianceMode::Fixed, Initialization::Zero, 60).unwrap();
    let cfg = EstimatorConfig {
        max_iters: 100_000,
        ..EstimatorConfig::for_sample_size(data.len())
    };
    let fit = fit_gradient_ascent(&phi0, &data, &cfg).unwrap();
    assert!(fit.converged);
    for pair in fit.trace.windows(2) {
        assert!(pair[1].log_likelihood >= pair[0].log_likelihood);
    }
    let ols = fit_ols(&data).unwrap();
    let gap = (fit.params.unpack().drift.coefficients() - ols.coefficients()).amax();
    assert!(gap <= 1e-6, "gap {gap}");
}

#[test]
fn huge_learning_rate_never_returns_nan() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let truth = random_drift(&mut rng, 2, 1);
    let data = linear_fixture(&mut rng, &truth, 80, 0.2);
    let phi0 = initial_params(&data, CovarianceMode::Cholesky, Initialization::Zero, 60).unwrap();
    let cfg = EstimatorConfig {
        learning_rate: 1e6,
        max_iters: 2_000,
        ..EstimatorConfig::for_sample_size(data.len())
    };
    match fit_gradient_ascent(&phi0, &data, &cfg) {
        Ok(fit) => {
            assert!(fit.params.is_finite());
            assert!(fit.trace.iter().all(|p| p.log_likelihood.is_finite()));
            assert!(fit.trace.last().unwrap().log_likelihood > fit.trace[0].log_likelihood);
        }
        Err(Error::Diverged { last_finite, .. }) => assert!(last_finite.is_finite()),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn joint_fit_improves_likelihood_and_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let truth = random_drift(&mut rng, 2, 2);
    let data = linear_fixture(&mut rng, &truth, 150, 0.2);
    let phi0 = initial_params(&data, CovarianceMode::Cholesky, Initialization::Ols, 60).unwrap();
    let cfg = EstimatorConfig::for_sample_size(data.len());
    let a = fit_gradient_ascent(&phi0, &data, &cfg).unwrap();
    let b = fit_gradient_ascent(&phi0, &data, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.trace.last().unwrap().log_likelihood > a.trace[0].log_likelihood);
    for pair in a.trace.windows(2) {
        assert!(pair[1].log_likelihood >= pair[0].log_likelihood);
    }
}

#[test]
fn trailing_covariance_of_identical_vectors_is_the_ridge() {
    let v = DVector::from_vec(vec![0.1, -0.2, 0.3]);
    let cov = trailing_covariance(&vec![v; 10], 5).unwrap();
    assert_eq!(cov.raw(), &DMatrix::zeros(3, 3));
    assert_eq!(
        cov.evaluate().matrix(),
        &(DMatrix::identity(3, 3) * cov.ridge())
    );
    assert!(cov.ridge() > 0.0);
}

#[test]
fn trailing_covariance_two_sample_formula() {
    let r1 = DVector::from_vec(vec![0.3, -0.1]);
    let r2 = DVector::from_vec(vec![-0.2, 0.4]);
    let old = DVector::from_vec(vec![100.0, 100.0]);
    let cov = trailing_covariance(&[old, r1.clone(), r2.clone()], 2).unwrap();
    let d = &r1 - &r2;
    let expected = &d * d.transpose() * 0.5;
    assert!((cov.raw() - expected).amax() < 1e-15);
}

#[test]
fn trailing_covariance_needs_history() {
    let v = vec![DVector::from_vec(vec![0.0]); 59];
    match trailing_covariance(&v, 60) {
        Err(Error::InsufficientHistory {
            required,
            available,
        }) => assert_eq!((required, available), (60, 59)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn trailing_covariance_of_standard_normals() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let v: Vec<_> = (0..60)
        .map(|_| DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let cov = trailing_covariance(&v, 60).unwrap();
    let m = cov.raw();
    for i in 0..3 {
        assert!(m[(i, i)] > 0.4 && m[(i, i)] < 1.8, "{m}");
        for j in 0..3 {
            if i != j {
                assert!(m[(i, j)].abs() < 0.5, "{m}");
            }
        }
    }
}
