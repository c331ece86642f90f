//! Trade January-length simulated markets with strategy parameters that
//! are the truth plus 10% relative noise, and report the distribution of
//! mean terminal wealth across perturbation draws.
//!
//! Run with `cargo run --release --example robustness`.

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vbid::backtest::{run_backtest, BacktestConfig, ParamsSource, PathDetail};
use vbid::estimation::TrainingSet;
use vbid::policy::ObjectiveConfig;
use vbid::sim::{
    perturb_params, random_truth, simulate_prices, simulate_weather, Ar1Params, TruthRanges,
    WeatherProcessConfig,
};

fn main() -> vbid::Result<()> {
    let truth = random_truth(
        9,
        3,
        &TruthRanges::default(),
        &mut ChaCha8Rng::seed_from_u64(2022),
    )?;
    let start = NaiveDate::from_ymd_opt(2022, 1, 3).expect("valid date");
    let process = Ar1Params {
        mean: 0.0,
        persistence: 0.8,
        innovation_sd: 3.0,
    };

    let mut means = Vec::new();
    for draw in 0..50u64 {
        let weather = simulate_weather(
            &WeatherProcessConfig::uniform(9, 3, process, 100 + draw, start, 17),
            21,
        )?;
        let data = TrainingSet::new(simulate_prices(&truth, &weather, 200 + draw)?.observations)?;
        let strategy = perturb_params(
            &truth,
            0.1,
            true,
            &mut ChaCha8Rng::seed_from_u64(300 + draw),
        )?;
        let mut cfg = BacktestConfig::new(ObjectiveConfig::with_horizon(21.0));
        cfg.paths = 200;
        cfg.master_seed = draw;
        cfg.detail = PathDetail::Terminal;
        means.push(
            run_backtest(&data, &ParamsSource::Fixed(strategy), &cfg)?
                .statistics
                .mean,
        );
    }
    means.sort_by(f64::total_cmp);
    let q = |p: f64| means[((means.len() - 1) as f64 * p).round() as usize];
    println!("mean terminal wealth over 50 perturbed strategies (X0 = 100, z = 105)");
    println!(
        "  min {:.2}  q25 {:.2}  median {:.2}  q75 {:.2}  max {:.2}",
        q(0.0),
        q(0.25),
        q(0.5),
        q(0.75),
        q(1.0)
    );
    println!(
        "  draws above X0: {}",
        means.iter().filter(|m| **m > 100.0).count()
    );
    Ok(())
}
