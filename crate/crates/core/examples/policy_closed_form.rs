//! The exploratory policy for a single node, evaluated along a few wealth
//! levels and sampled a handful of times.
//!
//! Run with `cargo run --example policy_closed_form`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vbid::linalg::SpdMatrix;
use vbid::policy::{ClosedFormPolicy, ObjectiveConfig, WealthState};

fn main() -> vbid::Result<()> {
    let drift = DVector::from_element(1, 0.1);
    let sigma = SpdMatrix::new(DMatrix::from_element(1, 1, 0.04))?;
    let objective = ObjectiveConfig::with_horizon(1.0);
    let policy = ClosedFormPolicy::new(&drift, &sigma, &objective)?;

    println!("rho = {:.6}", policy.rho());
    println!(
        "w   = {:.6}  (target z = {})",
        policy.multiplier(),
        objective.target_wealth
    );
    println!();
    println!(
        "{:>8} {:>8} {:>12} {:>12}",
        "wealth", "elapsed", "mean", "variance"
    );
    for (wealth, elapsed) in [
        (100.0, 0.0),
        (102.5, 0.5),
        (policy.multiplier(), 0.5),
        (110.0, 1.0),
    ] {
        let g = policy.at(WealthState { wealth, elapsed })?;
        println!(
            "{wealth:>8.3} {elapsed:>8.2} {:>12.6} {:>12.3e}",
            g.mean()[0],
            g.covariance().matrix()[(0, 0)]
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws: Vec<String> = (0..5)
        .map(|_| {
            policy.sample(
                WealthState {
                    wealth: 100.0,
                    elapsed: 0.0,
                },
                &mut rng,
            )
        })
        .map(|q| q.map(|q| format!("{:.4}", q.values()[0])))
        .collect::<vbid::Result<_>>()?;
    println!();
    println!("sampled allocations at X = 100: {}", draws.join(", "));
    Ok(())
}
