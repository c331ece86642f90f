//! Compare the analytic log-likelihood gradient with central finite
//! differences, for the drift-only and Cholesky layouts.
//!
//! Run with `cargo run --example gradient_check`.

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vbid::estimation::{check_gradient, ParamVector};
use vbid::sim::{
    random_truth, simulate_prices, simulate_weather, Ar1Params, TruthRanges, WeatherProcessConfig,
};

fn main() -> vbid::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = random_truth(3, 2, &TruthRanges::default(), &mut rng)?;
    let start = NaiveDate::from_ymd_opt(2022, 1, 3).expect("valid date");
    let process = Ar1Params {
        mean: 0.0,
        persistence: 0.8,
        innovation_sd: 3.0,
    };
    let weather = simulate_weather(
        &WeatherProcessConfig::uniform(3, 2, process, 4, start, 17),
        40,
    )?;
    let obs = simulate_prices(&truth, &weather, 5)?.observations;

    // A point away from the truth so the gradient is far from zero.
    let point = random_truth(3, 2, &TruthRanges::default(), &mut rng)?;
    let layouts = [
        (
            "drift only",
            ParamVector::drift_only(point.drift(), point.covariance().clone())?,
        ),
        (
            "cholesky",
            ParamVector::with_cholesky(point.drift(), point.covariance().evaluate())?,
        ),
    ];
    for (name, phi) in layouts {
        let check = check_gradient(&phi, &obs)?;
        println!(
            "{name:<10} {:>3} parameters, max relative error {:.3e}",
            phi.len(),
            check.max_relative_error
        );
        for (j, (a, d)) in check
            .analytic
            .iter()
            .zip(&check.numeric)
            .enumerate()
            .take(4)
        {
            println!("    [{j}] analytic {a:>14.6} numeric {d:>14.6}");
        }
    }
    Ok(())
}
