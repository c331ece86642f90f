//! The `vbid` command line.
//!
//! Every subcommand reads a TOML [`RunConfig`](crate::config::RunConfig),
//! applies flag overrides, and writes its outputs under `output_dir`.
//! Failures print a single `error[kind]: message` line on stderr and exit
//! with 2 for input/file problems or 1 for numeric failures.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backtest::{
    run_backtest, run_monte_carlo, summarize, MonteCarloEnvironment, ParamsSource, WeatherMode,
};
use crate::config::{
    derive_seed, EstimationMode, Overrides, RunConfig, SeedPurpose, SimulationSection, Source,
};
use crate::error::{Error, Result};
use crate::estimation::{
    check_gradient_with, estimate, initial_params, likelihood_gradient, CovarianceMode,
    EstimationMethod, Initialization, Observation, ParamVector, TracePoint,
};
use crate::ingest::{ingest_files, write_training_set, Dataset, ExclusionLog};
use crate::linalg::{matrix_from_rows, matrix_to_rows};
use crate::market_model::{CovarianceModel, DriftParams, MarketParams, NodeSet};
use crate::policy::{ClosedFormPolicy, WealthState};
use crate::sim::{
    export_csv, perturb_params, random_truth, simulate_prices, simulate_weather,
    WeatherProcessConfig,
};

/// Gradient agreement threshold for `check-grad`.
pub const GRADIENT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(
    name = "vbid",
    version,
    about = "Virtual bidding on DA/RT electricity price spreads"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, default_value = "vbid.toml")]
    pub config: PathBuf,
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte Carlo paths in the backtest.
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Exploration temperature.
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Expected terminal wealth target.
    #[arg(long, global = true)]
    pub z: Option<f64>,
    /// Delivery hour, 0 to 23.
    #[arg(long, global = true)]
    pub hour: Option<u8>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Estimation method.
    #[arg(long, global = true, value_enum)]
    pub method: Option<MethodArg>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Ols,
    #[value(alias = "gradient")]
    Grad,
}

impl From<MethodArg> for EstimationMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ols => EstimationMethod::Ols,
            MethodArg::Grad => EstimationMethod::Grad,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse the CSV inputs and write training_set.csv and exclusions.csv.
    Ingest,
    /// Write simulated da_lmp.csv, rt_lmp.csv, weather.csv and truth.json.
    Simulate,
    /// Fit the model and write params.json.
    Fit,
    /// Compare the analytic likelihood gradient with finite differences.
    CheckGrad {
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Run the strategy and write report.json and wealth_paths.csv.
    Backtest,
    /// Print the policy for one day and wealth level.
    Policy {
        #[arg(long)]
        wealth: f64,
        #[arg(long)]
        date: NaiveDate,
        /// Elapsed trading steps since the start of the horizon.
        #[arg(long, default_value_t = 0.0)]
        elapsed: f64,
        /// Parameters file; defaults to the configured or simulated parameters.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            paths: self.paths,
            gamma: self.gamma,
            z: self.z,
            hour: self.hour,
            out: self.out.clone(),
            method: self.method.map(Into::into),
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return 2;
            }
            let _ = write!(stdout, "{e}");
            return 0;
        }
    };
    match run(&cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            let _ = writeln!(stderr, "error[{}]: {message}", e.kind());
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let cfg = RunConfig::load(&cli.config, &cli.overrides())?;
    match &cli.command {
        Command::Ingest => cmd_ingest(&cfg, out),
        Command::Simulate => cmd_simulate(&cfg, out),
        Command::Fit => cmd_fit(&cfg, out),
        Command::CheckGrad { corrupt_gradient } => cmd_check_grad(&cfg, *corrupt_gradient, out),
        Command::Backtest => cmd_backtest(&cfg, out),
        Command::Policy {
            wealth,
            date,
            elapsed,
            params,
            format,
        } => cmd_policy(
            &cfg,
            *wealth,
            *date,
            *elapsed,
            params.as_deref(),
            *format,
            out,
        ),
    }
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn write_output(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// On-disk form of [`MarketParams`] plus the fit that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub nodes: Vec<String>,
    pub variables: Vec<String>,
    /// One row per node: intercept, then one coefficient per variable.
    pub drift: Vec<Vec<f64>>,
    pub covariance: CovarianceFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceFile {
    pub matrix: Vec<Vec<f64>>,
    pub ridge: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub method: EstimationMethod,
    pub covariance: CovarianceMode,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<TracePoint>,
}

impl ParamsFile {
    pub fn new(
        nodes: &NodeSet,
        variables: &[String],
        params: &MarketParams,
        fit: Option<FitRecord>,
    ) -> Self {
        ParamsFile {
            nodes: nodes.ids().to_vec(),
            variables: variables.to_vec(),
            drift: matrix_to_rows(params.drift().coefficients()),
            covariance: CovarianceFile {
                matrix: matrix_to_rows(params.covariance().raw()),
                ridge: params.covariance().ridge(),
            },
            fit,
        }
    }

    pub fn to_params(&self) -> Result<MarketParams> {
        MarketParams::new(
            DriftParams::new(matrix_from_rows(&self.drift)?)?,
            CovarianceModel::new(
                matrix_from_rows(&self.covariance.matrix)?,
                self.covariance.ridge,
            )?,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::InvalidInput(format!("serializing parameters: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })
    }

    /// Loads a file and checks that its labels match the run's.
    pub fn load_for(path: &Path, nodes: &NodeSet, variables: &[String]) -> Result<MarketParams> {
        let file = Self::load(path)?;
        if file.nodes != nodes.ids() || file.variables != variables {
            return Err(Error::InvalidConfig(format!(
                "{}: parameters are for nodes {:?} and variables {:?}, the run uses {:?} and {:?}",
                path.display(),
                file.nodes,
                file.variables,
                nodes.ids(),
                variables
            )));
        }
        file.to_params()
    }
}

struct Loaded {
    dataset: Dataset,
    exclusions: ExclusionLog,
    truth: Option<MarketParams>,
}

fn simulation_truth(cfg: &RunConfig, sim: &SimulationSection) -> Result<MarketParams> {
    match &sim.truth_file {
        Some(path) => ParamsFile::load_for(path, &cfg.nodes, &cfg.variables),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SeedPurpose::Truth));
            random_truth(cfg.nodes.len(), cfg.variables.len(), &sim.truth, &mut rng)
        }
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<Loaded> {
    match cfg.source()? {
        Source::Data(data) => {
            let (dataset, exclusions) =
                ingest_files(&RunConfig::data_paths(data), &cfg.ingest_options(data))?;
            Ok(Loaded {
                dataset,
                exclusions,
                truth: None,
            })
        }
        Source::Simulation(sim) => {
            let truth = simulation_truth(cfg, sim)?;
            let process = WeatherProcessConfig::uniform(
                cfg.nodes.len(),
                cfg.variables.len(),
                sim.weather,
                derive_seed(cfg.seed, SeedPurpose::Weather),
                sim.start_date,
                cfg.hour,
            );
            let weather = simulate_weather(&process, sim.days)?;
            let market =
                simulate_prices(&truth, &weather, derive_seed(cfg.seed, SeedPurpose::Prices))?;
            Ok(Loaded {
                dataset: market.into_dataset(cfg.nodes.clone(), cfg.variables.clone())?,
                exclusions: ExclusionLog::new(),
                truth: Some(truth),
            })
        }
    }
}

fn cmd_ingest(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let Source::Data(_) = cfg.source()? else {
        return Err(Error::InvalidConfig("ingest needs a [data] section".into()));
    };
    let loaded = load_dataset(cfg)?;
    let mut table = Vec::new();
    write_training_set(&loaded.dataset, &mut table)?;
    let training = write_output(&cfg.output_dir, "training_set.csv", &table)?;
    let mut log = Vec::new();
    loaded.exclusions.write_csv(&mut log)?;
    let exclusions = write_output(&cfg.output_dir, "exclusions.csv", &log)?;
    say(
        out,
        format_args!(
            "ingested {} days, excluded {} ({}, {})",
            loaded.dataset.training.len(),
            loaded.exclusions.len(),
            training.display(),
            exclusions.display()
        ),
    )?;
    Ok(0)
}

fn cmd_simulate(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let Source::Simulation(_) = cfg.source()? else {
        return Err(Error::InvalidConfig(
            "simulate needs a [simulation] section".into(),
        ));
    };
    let loaded = load_dataset(cfg)?;
    let (mut da, mut rt, mut wx) = (Vec::new(), Vec::new(), Vec::new());
    export_csv(&loaded.dataset, 40.0, 12, &mut da, &mut rt, &mut wx)?;
    write_output(&cfg.output_dir, "da_lmp.csv", &da)?;
    write_output(&cfg.output_dir, "rt_lmp.csv", &rt)?;
    write_output(&cfg.output_dir, "weather.csv", &wx)?;
    let truth = loaded.truth.expect("simulation has a truth");
    let file = ParamsFile::new(&cfg.nodes, &cfg.variables, &truth, None);
    write_output(&cfg.output_dir, "truth.json", file.to_json()?.as_bytes())?;
    say(
        out,
        format_args!(
            "simulated {} days at {} nodes into {}",
            loaded.dataset.training.len(),
            cfg.nodes.len(),
            cfg.output_dir.display()
        ),
    )?;
    Ok(0)
}

fn fit_dataset(cfg: &RunConfig, dataset: &Dataset) -> Result<(MarketParams, FitRecord)> {
    let obs = dataset.observations();
    let spec = cfg.estimator.to_spec(obs.len(), cfg.seed);
    let fit = estimate(obs, &spec)?;
    let record = FitRecord {
        method: spec.method,
        covariance: spec.covariance,
        converged: fit.converged,
        iterations: fit.iterations,
        trace: fit.trace,
    };
    Ok((fit.params, record))
}

fn cmd_fit(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let loaded = load_dataset(cfg)?;
    let (params, record) = fit_dataset(cfg, &loaded.dataset)?;
    let last = record.trace.last().map_or(f64::NAN, |t| t.log_likelihood);
    let summary = format!(
        "method {}, {} iterations, converged {}, log-likelihood {last}",
        match record.method {
            EstimationMethod::Ols => "ols",
            EstimationMethod::Grad => "grad",
        },
        record.iterations,
        record.converged
    );
    let file = ParamsFile::new(&cfg.nodes, &cfg.variables, &params, Some(record));
    let path = write_output(&cfg.output_dir, "params.json", file.to_json()?.as_bytes())?;
    say(out, format_args!("{summary}"))?;
    say(out, format_args!("wrote {}", path.display()))?;
    Ok(0)
}

fn cmd_check_grad(cfg: &RunConfig, corrupt: bool, out: &mut dyn Write) -> Result<i32> {
    let loaded = load_dataset(cfg)?;
    let obs = loaded.dataset.observations();
    let window = cfg.estimator.window.min(obs.len()).max(2);
    // Zero drift keeps the gradient away from the stationary point.
    let phi = initial_params(obs, cfg.estimator.covariance, Initialization::Zero, window)?;
    let gradient = |p: &ParamVector, o: &[Observation]| -> Result<ParamVector> {
        let g = likelihood_gradient(p, o)?;
        if corrupt {
            let mut v = g.values().clone();
            v[0] = v[0] * 1.01 + 1.0;
            g.with_values(v)
        } else {
            Ok(g)
        }
    };
    let check = check_gradient_with(&phi, obs, gradient)?;
    say(
        out,
        format_args!(
            "max relative gradient error {:e} over {} parameters ({:?} covariance)",
            check.max_relative_error,
            phi.len(),
            cfg.estimator.covariance
        ),
    )?;
    Ok(if check.max_relative_error <= GRADIENT_TOLERANCE {
        0
    } else {
        1
    })
}

fn strategy_params(
    cfg: &RunConfig,
    loaded: &Loaded,
    explicit: Option<&Path>,
) -> Result<MarketParams> {
    let base = match (
        explicit.or(cfg.backtest.params_file.as_deref()),
        &loaded.truth,
    ) {
        (Some(path), _) => ParamsFile::load_for(path, &cfg.nodes, &cfg.variables)?,
        (None, Some(truth)) => truth.clone(),
        (None, None) => fit_dataset(cfg, &loaded.dataset)?.0,
    };
    if cfg.backtest.perturbation > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SeedPurpose::Perturbation));
        perturb_params(
            &base,
            cfg.backtest.perturbation,
            cfg.backtest.perturb_covariance,
            &mut rng,
        )
    } else {
        Ok(base)
    }
}

fn cmd_backtest(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let loaded = load_dataset(cfg)?;
    let days = loaded.dataset.training.len();
    let mut report = match (cfg.backtest.estimation, &loaded.truth) {
        (EstimationMode::Fixed, Some(truth)) => {
            let strategy = strategy_params(cfg, &loaded, None)?;
            let env = MonteCarloEnvironment {
                truth: truth.clone(),
                weather: loaded
                    .dataset
                    .observations()
                    .iter()
                    .map(|o| o.weather.clone())
                    .collect(),
                dt: 1.0,
            };
            run_monte_carlo(&env, &strategy, &cfg.backtest_config(days))?
        }
        (EstimationMode::Fixed, None) => {
            let strategy = strategy_params(cfg, &loaded, None)?;
            run_backtest(
                &loaded.dataset.training,
                &ParamsSource::Fixed(strategy),
                &cfg.backtest_config(days),
            )?
        }
        (EstimationMode::Rolling, _) => {
            let traded = days.saturating_sub(cfg.estimator.window).max(1);
            run_backtest(
                &loaded.dataset.training,
                &ParamsSource::Rolling,
                &cfg.backtest_config(traded),
            )?
        }
    };
    report.exclusions = loaded.exclusions;
    let json = report.to_json()? + "\n";
    write_output(&cfg.output_dir, "report.json", json.as_bytes())?;
    let mut csv = Vec::new();
    report.write_wealth_csv(&mut csv)?;
    write_output(&cfg.output_dir, "wealth_paths.csv", &csv)?;

    let s = summarize(&report);
    say(out, format_args!("paths {}", s.paths))?;
    say(
        out,
        format_args!(
            "terminal mean {} (standard error {})",
            s.mean, s.standard_error
        ),
    )?;
    say(out, format_args!("terminal variance {}", s.variance))?;
    say(out, format_args!("terminal min {} max {}", s.min, s.max))?;
    say(
        out,
        format_args!("multiplier {} objective {}", s.multiplier, s.objective),
    )?;
    say(
        out,
        format_args!("degenerate days {}", report.degenerate_dates.len()),
    )?;
    say(out, format_args!("wrote {}", cfg.output_dir.display()))?;
    Ok(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyView {
    pub date: NaiveDate,
    pub wealth: f64,
    pub elapsed: f64,
    pub horizon: f64,
    pub rho: f64,
    pub multiplier: f64,
    pub nodes: Vec<String>,
    pub mean: Vec<f64>,
    pub covariance_diagonal: Vec<f64>,
}

impl PolicyView {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "date {}\nwealth {}\nelapsed {}\nhorizon {}\nrho {}\nmultiplier {}\nnode mean variance\n",
            self.date, self.wealth, self.elapsed, self.horizon, self.rho, self.multiplier
        );
        for ((id, m), v) in self
            .nodes
            .iter()
            .zip(&self.mean)
            .zip(&self.covariance_diagonal)
        {
            s.push_str(&format!("{id} {m} {v}\n"));
        }
        s
    }
}

fn cmd_policy(
    cfg: &RunConfig,
    wealth: f64,
    date: NaiveDate,
    elapsed: f64,
    params: Option<&Path>,
    format: OutputFormat,
    out: &mut dyn Write,
) -> Result<i32> {
    let loaded = load_dataset(cfg)?;
    let obs = loaded.dataset.observations();
    let t = loaded
        .dataset
        .training
        .position(date)
        .ok_or(Error::UnknownDate(date))?;
    let params = strategy_params(cfg, &loaded, params)?;
    let theta = match cfg.backtest.weather_mode {
        WeatherMode::SameDay => &obs[t].weather,
        WeatherMode::NextDay => &obs.get(t + 1).unwrap_or(&obs[t]).weather,
    };
    let (b, sigma) = params.evaluate(theta)?;
    let objective = cfg.objective.to_objective(obs.len());
    let policy = ClosedFormPolicy::new(&b, sigma, &objective).map_err(|e| e.on_day(date))?;
    let g = policy.at(WealthState { wealth, elapsed })?;
    let view = PolicyView {
        date,
        wealth,
        elapsed,
        horizon: objective.horizon,
        rho: policy.rho(),
        multiplier: policy.multiplier(),
        nodes: cfg.nodes.ids().to_vec(),
        mean: g.mean().iter().copied().collect(),
        covariance_diagonal: g.covariance().matrix().diagonal().iter().copied().collect(),
    };
    let text = match format {
        OutputFormat::Text => view.to_text(),
        OutputFormat::Json => {
            serde_json::to_string_pretty(&view).map_err(|e| Error::InvalidInput(e.to_string()))?
                + "\n"
        }
    };
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))?;
    Ok(0)
}
