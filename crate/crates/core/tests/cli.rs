use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SIM: &str = r#"
seed = 7
nodes = ["N1", "N2", "N3"]
variables = ["temperature", "wind_speed"]

[simulation]
days = 90

[backtest]
paths = 50
"#;

fn vbid(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vbid"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = vbid(dir, args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn sim_dir() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("vbid.toml"), SIM).unwrap();
    dir
}

/// A data-mode project built from simulated CSVs.
fn data_dir() -> TempDir {
    let dir = sim_dir();
    ok(dir.path(), &["--out", "input", "simulate"]);
    std::fs::write(
        dir.path().join("data.toml"),
        r#"
seed = 7
nodes = ["N1", "N2", "N3"]
variables = ["temperature", "wind_speed"]

[data]
da = "input/da_lmp.csv"
rt = "input/rt_lmp.csv"
weather = "input/weather.csv"

[backtest]
paths = 20
"#,
    )
    .unwrap();
    dir
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

#[test]
fn ingest_writes_both_files() {
    let dir = data_dir();
    ok(dir.path(), &["--config", "data.toml", "ingest"]);
    let training = std::fs::read_to_string(dir.path().join("out/training_set.csv")).unwrap();
    assert!(training.starts_with("date,hour,node_id,price_diff,temperature,wind_speed\n"));
    assert_eq!(training.lines().count(), 1 + 90 * 3);
    let exclusions = std::fs::read_to_string(dir.path().join("out/exclusions.csv")).unwrap();
    assert_eq!(exclusions, "date,reason\n");
}

#[test]
fn one_bad_date_gives_one_exclusion() {
    let dir = data_dir();
    let path = dir.path().join("input/rt_lmp.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with("2022-01-10,17,5,N2,"))
        .collect();
    assert_eq!(kept.len(), text.lines().count() - 1);
    std::fs::write(&path, kept.join("\n") + "\n").unwrap();
    ok(dir.path(), &["--config", "data.toml", "ingest"]);
    let exclusions = std::fs::read_to_string(dir.path().join("out/exclusions.csv")).unwrap();
    assert_eq!(exclusions, "date,reason\n2022-01-10,incomplete_intervals\n");
}

#[test]
fn missing_weather_file_exits_2_and_names_it() {
    let dir = data_dir();
    std::fs::remove_file(dir.path().join("input/weather.csv")).unwrap();
    let out = vbid(dir.path(), &["--config", "data.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("weather.csv"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn malformed_csv_reports_line() {
    let dir = data_dir();
    let path = dir.path().join("input/da_lmp.csv");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("2022-12-01,17,N1,abc\n");
    std::fs::write(&path, text).unwrap();
    let out = vbid(dir.path(), &["--config", "data.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("da_lmp.csv"), "{}", stderr(&out));
}

#[test]
fn configuration_errors_exit_2() {
    let dir = sim_dir();
    std::fs::write(
        dir.path().join("bad.toml"),
        format!("{SIM}\nunknown_key = 1\n"),
    )
    .unwrap();
    assert_eq!(
        vbid(dir.path(), &["--config", "bad.toml", "fit"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        vbid(dir.path(), &["--config", "absent.toml", "fit"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        vbid(dir.path(), &["fit", "--no-such-flag"]).status.code(),
        Some(2)
    );
}

#[test]
fn ols_and_gradient_fits_agree() {
    let dir = sim_dir();
    ok(dir.path(), &["--method", "ols", "--out", "ols", "fit"]);
    ok(dir.path(), &["--method", "grad", "--out", "grad", "fit"]);
    let ols = json(&dir.path().join("ols/params.json"));
    let grad = json(&dir.path().join("grad/params.json"));
    let rows = |v: &Value| -> Vec<f64> {
        v["drift"]
            .as_array()
            .unwrap()
            .iter()
            .flat_map(floats)
            .collect()
    };
    let gap = rows(&ols)
        .iter()
        .zip(rows(&grad))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(gap <= 1e-6, "gap {gap}");
}

#[test]
fn fit_trace_never_decreases() {
    let dir = sim_dir();
    std::fs::write(
        dir.path().join("zero.toml"),
        format!("{SIM}\n[estimator]\ninit = \"zero\"\ncovariance = \"cholesky\"\n"),
    )
    .unwrap();
    ok(dir.path(), &["--config", "zero.toml", "fit"]);
    let params = json(&dir.path().join("out/params.json"));
    let trace: Vec<f64> = params["fit"]["trace"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["log_likelihood"].as_f64().unwrap())
        .collect();
    assert!(trace.len() > 2);
    assert!(trace.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn check_grad_passes_and_detects_corruption() {
    let dir = sim_dir();
    let text = ok(dir.path(), &["check-grad"]);
    assert!(text.starts_with("max relative gradient error"), "{text}");
    let out = vbid(dir.path(), &["check-grad", "--corrupt-gradient"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn backtest_writes_report_and_paths() {
    let dir = sim_dir();
    let text = ok(dir.path(), &["--paths", "400", "backtest"]);
    assert!(text.contains("terminal mean"), "{text}");
    let report = json(&dir.path().join("out/report.json"));
    let stats = &report["statistics"];
    let mean = stats["mean"].as_f64().unwrap();
    let se = (stats["variance"].as_f64().unwrap() / 400.0).sqrt();
    assert!((mean - 105.0).abs() <= 4.0 * se, "mean {mean}, se {se}");
    let csv = std::fs::read_to_string(dir.path().join("out/wealth_paths.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 400 * 91);
}

#[test]
fn single_path_reruns_are_identical() {
    let dir = sim_dir();
    for out in ["a", "b"] {
        ok(
            dir.path(),
            &["--paths", "1", "--seed", "7", "--out", out, "backtest"],
        );
    }
    for file in ["report.json", "wealth_paths.csv"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
}

#[test]
fn degenerate_days_are_flat_and_flagged() {
    let dir = data_dir();
    // Drift vanishes wherever temperature is exactly zero.
    let params = r#"{
  "nodes": ["N1", "N2", "N3"],
  "variables": ["temperature", "wind_speed"],
  "drift": [[0.0, 0.01, 0.0], [0.0, -0.01, 0.0], [0.0, 0.005, 0.0]],
  "covariance": {"matrix": [[0.05, 0.0, 0.0], [0.0, 0.05, 0.0], [0.0, 0.0, 0.05]], "ridge": 0.0}
}"#;
    std::fs::write(dir.path().join("params.json"), params).unwrap();
    let path = dir.path().join("input/weather.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let edited: Vec<String> = text
        .lines()
        .map(|l| {
            if l.starts_with("2022-01-05,17,") && l.contains(",temperature,") {
                let mut cols: Vec<&str> = l.split(',').collect();
                cols[4] = "0";
                cols.join(",")
            } else {
                l.to_string()
            }
        })
        .collect();
    std::fs::write(&path, edited.join("\n") + "\n").unwrap();
    let cfg = std::fs::read_to_string(dir.path().join("data.toml")).unwrap();
    std::fs::write(
        dir.path().join("data.toml"),
        cfg.replace(
            "[backtest]\n",
            "[backtest]\nparams_file = \"params.json\"\n",
        ),
    )
    .unwrap();
    ok(dir.path(), &["--config", "data.toml", "backtest"]);
    let report = json(&dir.path().join("out/report.json"));
    assert_eq!(
        report["degenerate_dates"],
        serde_json::json!(["2022-01-05"])
    );
    for path in report["paths"].as_array().unwrap() {
        assert!(floats(&path["allocations"][2]).iter().all(|q| *q == 0.0));
    }
}

#[test]
fn rolling_backtest_needs_history() {
    let dir = sim_dir();
    std::fs::write(
        dir.path().join("short.toml"),
        SIM.replace("days = 90", "days = 40") + "estimation = \"rolling\"\n",
    )
    .unwrap();
    let out = vbid(dir.path(), &["--config", "short.toml", "backtest"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("insufficient_history"));
}

fn policy_json(dir: &Path, date: &str, extra: &[&str]) -> Value {
    let mut args = vec!["policy", "--date", date, "--format", "json"];
    args.extend(extra);
    serde_json::from_str(&ok(dir, &args)).unwrap()
}

#[test]
fn policy_mean_vanishes_at_the_multiplier() {
    let dir = sim_dir();
    let view = policy_json(dir.path(), "2022-01-20", &["--wealth", "100"]);
    let w = view["multiplier"].as_f64().unwrap();
    let at_w = policy_json(dir.path(), "2022-01-20", &["--wealth", &w.to_string()]);
    assert!(
        floats(&at_w["mean"]).iter().all(|m| m.abs() <= 1e-9),
        "{at_w}"
    );
}

#[test]
fn doubling_gamma_doubles_the_printed_variances() {
    let dir = sim_dir();
    let base = policy_json(
        dir.path(),
        "2022-01-20",
        &["--wealth", "100", "--gamma", "0.001"],
    );
    let doubled = policy_json(
        dir.path(),
        "2022-01-20",
        &["--wealth", "100", "--gamma", "0.002"],
    );
    for (a, b) in floats(&base["covariance_diagonal"])
        .iter()
        .zip(floats(&doubled["covariance_diagonal"]))
    {
        assert_eq!(2.0 * a, b);
    }
    assert_eq!(base["mean"], doubled["mean"]);
}

#[test]
fn text_and_json_policy_agree() {
    let dir = sim_dir();
    let view = policy_json(dir.path(), "2022-01-20", &["--wealth", "101"]);
    let text = ok(
        dir.path(),
        &["policy", "--date", "2022-01-20", "--wealth", "101"],
    );
    for m in floats(&view["mean"]) {
        assert!(text.contains(&m.to_string()), "{text} lacks {m}");
    }
}

#[test]
fn one_node_policy_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("vbid.toml"),
        "nodes = [\"A\"]\nvariables = [\"temperature\"]\n\n[simulation]\ndays = 5\ntruth_file = \"truth.json\"\n\n\
         [objective]\nhorizon = 1.0\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("truth.json"),
        r#"{"nodes": ["A"], "variables": ["temperature"], "drift": [[0.1, 0.0]],
            "covariance": {"matrix": [[0.04]], "ridge": 0.0}}"#,
    )
    .unwrap();
    let view = policy_json(
        dir.path(),
        "2022-01-03",
        &["--wealth", "100", "--params", "truth.json"],
    );
    let growth = 0.25f64.exp();
    let w = (105.0 * growth - 100.0) / (growth - 1.0);
    assert!((view["rho"].as_f64().unwrap() - 0.25).abs() <= 1e-12);
    assert!((view["multiplier"].as_f64().unwrap() - w).abs() <= 1e-9);
    assert!((floats(&view["mean"])[0] + 2.5 * (100.0 - w)).abs() <= 1e-9);
    let variance = 0.0005 * 25.0 * growth;
    assert!((floats(&view["covariance_diagonal"])[0] - variance).abs() <= 1e-12);
}

#[test]
fn unknown_policy_date_exits_2() {
    let dir = sim_dir();
    let out = vbid(
        dir.path(),
        &["policy", "--date", "1999-01-01", "--wealth", "100"],
    );
    assert_eq!(out.status.code(), Some(2));
}
