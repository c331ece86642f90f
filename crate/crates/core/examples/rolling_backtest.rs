//! Historical backtest with monthly drift refits and a 60-day trailing
//! covariance, against the same run with the true parameters.
//!
//! Early refits see only 60 days and can overstate the signal; the
//! exploration variance then grows like `e^{ρ(T−t)}` and the uncapped run
//! takes enormous positions. The capped run shows the per-node guard.
//!
//! Run with `cargo run --release --example rolling_backtest`.

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vbid::backtest::{run_backtest, summarize, BacktestConfig, ParamsSource, PathDetail};
use vbid::estimation::TrainingSet;
use vbid::policy::ObjectiveConfig;
use vbid::sim::{
    random_truth, simulate_prices, simulate_weather, Ar1Params, TruthRanges, WeatherProcessConfig,
};

fn main() -> vbid::Result<()> {
    let truth = random_truth(
        4,
        2,
        &TruthRanges::default(),
        &mut ChaCha8Rng::seed_from_u64(9),
    )?;
    let start = NaiveDate::from_ymd_opt(2021, 10, 1).expect("valid date");
    let process = Ar1Params {
        mean: 0.0,
        persistence: 0.8,
        innovation_sd: 3.0,
    };
    let weather = simulate_weather(
        &WeatherProcessConfig::uniform(4, 2, process, 10, start, 17),
        150,
    )?;
    let data = TrainingSet::new(simulate_prices(&truth, &weather, 11)?.observations)?;

    let traded = data.len() - 60;
    let mut cfg = BacktestConfig::new(ObjectiveConfig::with_horizon(traded as f64));
    cfg.paths = 500;
    cfg.master_seed = 12;
    cfg.detail = PathDetail::Terminal;

    let rolling = run_backtest(&data, &ParamsSource::Rolling, &cfg)?;
    for day in rolling.days.iter().step_by(30) {
        println!(
            "  {}  rho {:.4}  w {:?}",
            day.date,
            day.rho,
            day.multiplier.map(|w| (w * 1e3).round() / 1e3)
        );
    }
    let s = summarize(&rolling);
    println!(
        "rolling refit over {traded} days:  mean X_T {:.3e}, sd {:.3e}",
        s.mean,
        s.variance.sqrt()
    );

    cfg.max_abs_allocation = Some(25.0);
    let capped = summarize(&run_backtest(&data, &ParamsSource::Rolling, &cfg)?);
    println!(
        "same, capped at $25 per node:    mean X_T {:.3}, sd {:.3}",
        capped.mean,
        capped.variance.sqrt()
    );
    cfg.max_abs_allocation = None;

    // Same traded days, true parameters.
    let tail = TrainingSet::new(data.observations()[60..].to_vec())?;
    let oracle = summarize(&run_backtest(&tail, &ParamsSource::Fixed(truth), &cfg)?);
    println!(
        "true parameters, uncapped:        mean X_T {:.3}, sd {:.3}",
        oracle.mean,
        oracle.variance.sqrt()
    );
    Ok(())
}
