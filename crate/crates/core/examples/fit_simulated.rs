//! Simulate a three-node market, then recover its drift by least squares
//! and by joint gradient ascent over drift and covariance, started from
//! the least-squares solution.
//!
//! Run with `cargo run --release --example fit_simulated`.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use vbid::estimation::{
    estimate, fit_ols, likelihood_gradient, CovarianceMode, EstimationMethod, EstimationSpec,
    EstimatorConfig, Initialization, ParamVector,
};
use vbid::market_model::{CovarianceModel, DriftParams, MarketParams};
use vbid::sim::{simulate_prices, simulate_weather, Ar1Params, WeatherProcessConfig};

fn main() -> vbid::Result<()> {
    let truth = MarketParams::new(
        DriftParams::new(DMatrix::from_row_slice(
            3,
            3,
            &[0.05, 0.02, -0.03, -0.04, 0.03, 0.01, 0.06, -0.02, 0.025],
        ))?,
        CovarianceModel::new(
            DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 1.5, 0.2, 0.1, 0.2, 0.8]) * 1e-3,
            0.0,
        )?,
    )?;
    let process = Ar1Params {
        mean: 0.0,
        persistence: 0.6,
        innovation_sd: 2.0,
    };
    let start = NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date");
    let weather = simulate_weather(
        &WeatherProcessConfig::uniform(3, 2, process, 42, start, 17),
        500,
    )?;
    let market = simulate_prices(&truth, &weather, 43)?;
    let obs = &market.observations;

    let ols = fit_ols(obs)?;
    let spec = EstimationSpec {
        method: EstimationMethod::Grad,
        covariance: CovarianceMode::Cholesky,
        init: Initialization::Ols,
        window: 60,
        config: EstimatorConfig {
            grad_tolerance: 1e-3,
            max_iters: 200_000,
            ..EstimatorConfig::for_sample_size(obs.len())
        },
    };
    let joint = estimate(obs, &spec)?;

    println!(
        "truth drift coefficients (intercept, slopes):\n{}",
        truth.drift().coefficients()
    );
    println!("least squares:\n{}", ols.coefficients());
    println!(
        "joint gradient ascent ({} evaluations, converged {}):\n{}",
        joint.iterations,
        joint.converged,
        joint.params.drift().coefficients()
    );
    // Ascent also stops when no step length improves the likelihood in
    // floating point; the remaining gradient shows how close that is.
    let phi =
        ParamVector::with_cholesky(joint.params.drift(), joint.params.covariance().evaluate())?;
    println!(
        "final gradient sup-norm {:.3e}",
        likelihood_gradient(&phi, obs)?.sup_norm()
    );
    println!("fitted covariance:\n{}", joint.params.covariance().raw());
    println!("truth covariance:\n{}", truth.covariance().raw());
    Ok(())
}
