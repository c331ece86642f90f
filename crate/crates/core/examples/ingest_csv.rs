//! Write a small market to the three CSV inputs, damage a couple of rows,
//! and ingest it back. Prints the exclusion log and the first training rows.
//!
//! Run with `cargo run --example ingest_csv`.

use std::fs::File;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vbid::ingest::{ingest_files, write_training_set, DataPaths, IngestOptions};
use vbid::market_model::NodeSet;
use vbid::sim::{
    export_csv, random_truth, simulate_prices, simulate_weather, Ar1Params, TruthRanges,
    WeatherProcessConfig,
};

fn main() -> vbid::Result<()> {
    let dir = std::env::temp_dir().join("vbid-ingest-example");
    std::fs::create_dir_all(&dir).map_err(|e| vbid::Error::InvalidInput(e.to_string()))?;
    let nodes = NodeSet::new(["NORTH", "SOUTH"])?;
    let variables = vec!["temperature".to_string()];

    let truth = random_truth(
        2,
        1,
        &TruthRanges::default(),
        &mut ChaCha8Rng::seed_from_u64(1),
    )?;
    let start = NaiveDate::from_ymd_opt(2022, 3, 1).expect("valid date");
    let process = Ar1Params {
        mean: 15.0,
        persistence: 0.7,
        innovation_sd: 2.0,
    };
    let weather = simulate_weather(
        &WeatherProcessConfig::uniform(2, 1, process, 2, start, 17),
        10,
    )?;
    let data =
        simulate_prices(&truth, &weather, 3)?.into_dataset(nodes.clone(), variables.clone())?;

    let paths = DataPaths {
        da: dir.join("da_lmp.csv"),
        rt: dir.join("rt_lmp.csv"),
        weather: dir.join("weather.csv"),
    };
    let create =
        |p: &std::path::Path| File::create(p).map_err(|e| vbid::Error::InvalidInput(e.to_string()));
    export_csv(
        &data,
        40.0,
        12,
        create(&paths.da)?,
        create(&paths.rt)?,
        create(&paths.weather)?,
    )?;

    // Drop one real-time interval and one weather reading.
    let edit = |path: &std::path::Path, drop: &str| -> vbid::Result<()> {
        let text =
            std::fs::read_to_string(path).map_err(|e| vbid::Error::InvalidInput(e.to_string()))?;
        let kept: Vec<&str> = text.lines().filter(|l| !l.starts_with(drop)).collect();
        std::fs::write(path, kept.join("\n") + "\n")
            .map_err(|e| vbid::Error::InvalidInput(e.to_string()))
    };
    edit(&paths.rt, "2022-03-04,17,7,SOUTH,")?;
    edit(&paths.weather, "2022-03-08,17,NORTH,")?;

    let (dataset, log) = ingest_files(&paths, &IngestOptions::new(nodes, variables, 17))?;
    println!(
        "kept {} days, excluded {}",
        dataset.training.len(),
        log.len()
    );
    for e in log.entries() {
        println!("  {} {}", e.date, e.reason);
    }
    let mut csv = Vec::new();
    write_training_set(&dataset, &mut csv)?;
    println!();
    for line in String::from_utf8_lossy(&csv).lines().take(5) {
        println!("{line}");
    }
    Ok(())
}
