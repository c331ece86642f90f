//! Monte Carlo backtest of the exploratory strategy on a constant-parameter
//! two-node market with 250 daily steps in a unit horizon.
//!
//! Run with `cargo run --release --example backtest_simulated`.

use chrono::{Days, NaiveDate};
use nalgebra::{DMatrix, DVector};
use vbid::backtest::{
    run_monte_carlo, summarize, BacktestConfig, MonteCarloEnvironment, PathDetail,
};
use vbid::market_model::{CovarianceModel, DriftParams, MarketParams, MeteoMatrix};
use vbid::policy::ObjectiveConfig;

fn main() -> vbid::Result<()> {
    let truth = MarketParams::new(
        DriftParams::constant(&DVector::from_row_slice(&[0.3, 0.2]), 0)?,
        CovarianceModel::new(DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.3]), 0.0)?,
    )?;
    let start = NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date");
    let weather = (0..250)
        .map(|k| MeteoMatrix::new(start + Days::new(k), 17, DMatrix::zeros(2, 0)))
        .collect::<vbid::Result<Vec<_>>>()?;
    let env = MonteCarloEnvironment {
        truth: truth.clone(),
        weather,
        dt: 1.0 / 250.0,
    };

    for gamma in [0.001, 0.1, 1.0] {
        let mut cfg = BacktestConfig::new(ObjectiveConfig {
            gamma,
            ..ObjectiveConfig::with_horizon(1.0)
        });
        cfg.paths = 10_000;
        cfg.master_seed = 2023;
        cfg.detail = PathDetail::Terminal;
        let s = summarize(&run_monte_carlo(&env, &truth, &cfg)?);
        println!(
            "gamma {gamma:<6} mean X_T {:.3} +/- {:.3}  variance {:.3}  w {:.3}",
            s.mean, s.standard_error, s.variance, s.multiplier
        );
    }
    Ok(())
}
