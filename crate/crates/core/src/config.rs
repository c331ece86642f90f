//! TOML run configuration and command-line overrides.
//!
//! Relative paths inside the file resolve against the file's directory.
//! Values are taken flag first, then file, then built-in default.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backtest::{BacktestConfig, CovarianceInput, PathDetail, WeatherMode};
use crate::error::{Error, Result};
use crate::estimation::{
    CovarianceMode, EstimationMethod, EstimationSpec, EstimatorConfig, Initialization,
    DEFAULT_COVARIANCE_WINDOW,
};
use crate::ingest::{DataPaths, IngestOptions};
use crate::market_model::{NodeSet, DEFAULT_PRICE_FLOOR};
use crate::policy::{ObjectiveConfig, DEFAULT_RHO_FLOOR};
use crate::sim::{Ar1Params, TruthRanges};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_hour")]
    pub hour: u8,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub nodes: NodeSet,
    pub variables: Vec<String>,
    pub data: Option<DataSection>,
    pub simulation: Option<SimulationSection>,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub backtest: BacktestSection,
}

fn default_hour() -> u8 {
    17
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub da: PathBuf,
    pub rt: PathBuf,
    pub weather: PathBuf,
    #[serde(default = "default_intervals")]
    pub intervals_expected: u32,
    #[serde(default = "default_price_floor")]
    pub price_floor: f64,
}

fn default_intervals() -> u32 {
    12
}

fn default_price_floor() -> f64 {
    DEFAULT_PRICE_FLOOR
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_sim_days")]
    pub days: usize,
    #[serde(default = "default_start_date")]
    pub start_date: NaiveDate,
    #[serde(default = "default_weather_process")]
    pub weather: Ar1Params,
    /// Ground truth from a params file; drawn at random when absent.
    pub truth_file: Option<PathBuf>,
    #[serde(default)]
    pub truth: TruthRanges,
}

fn default_sim_days() -> usize {
    90
}

fn default_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 1, 3).expect("valid date")
}

fn default_weather_process() -> Ar1Params {
    Ar1Params {
        mean: 0.0,
        persistence: 0.8,
        innovation_sd: 3.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    #[serde(default = "default_z")]
    pub z: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_initial_wealth")]
    pub initial_wealth: f64,
    /// Trading steps; defaults to the number of traded days.
    pub horizon: Option<f64>,
    #[serde(default = "default_rho_floor")]
    pub rho_floor: f64,
}

fn default_z() -> f64 {
    105.0
}

fn default_gamma() -> f64 {
    0.001
}

fn default_initial_wealth() -> f64 {
    100.0
}

fn default_rho_floor() -> f64 {
    DEFAULT_RHO_FLOOR
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        ObjectiveSection {
            z: default_z(),
            gamma: default_gamma(),
            initial_wealth: default_initial_wealth(),
            horizon: None,
            rho_floor: default_rho_floor(),
        }
    }
}

impl ObjectiveSection {
    pub fn to_objective(&self, default_horizon: usize) -> ObjectiveConfig {
        ObjectiveConfig {
            target_wealth: self.z,
            gamma: self.gamma,
            initial_wealth: self.initial_wealth,
            horizon: self.horizon.unwrap_or(default_horizon as f64),
            rho_floor: self.rho_floor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    #[serde(default = "default_method")]
    pub method: EstimationMethod,
    #[serde(default = "default_covariance_mode")]
    pub covariance: CovarianceMode,
    #[serde(default = "default_init")]
    pub init: Initialization,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Defaults to `1e-6 · T`.
    pub grad_tolerance: Option<f64>,
    #[serde(default = "default_covariance_input")]
    pub covariance_input: CovarianceInput,
}

fn default_method() -> EstimationMethod {
    EstimationMethod::Grad
}

fn default_covariance_mode() -> CovarianceMode {
    CovarianceMode::Fixed
}

fn default_init() -> Initialization {
    Initialization::Ols
}

fn default_window() -> usize {
    DEFAULT_COVARIANCE_WINDOW
}

fn default_learning_rate() -> f64 {
    1.0
}

fn default_max_iters() -> usize {
    10_000
}

fn default_covariance_input() -> CovarianceInput {
    CovarianceInput::Residuals
}

impl Default for EstimatorSection {
    fn default() -> Self {
        EstimatorSection {
            method: default_method(),
            covariance: default_covariance_mode(),
            init: default_init(),
            window: default_window(),
            learning_rate: default_learning_rate(),
            max_iters: default_max_iters(),
            grad_tolerance: None,
            covariance_input: default_covariance_input(),
        }
    }
}

impl EstimatorSection {
    pub fn to_spec(&self, days: usize, seed: u64) -> EstimationSpec {
        let mut config = EstimatorConfig::for_sample_size(days);
        config.learning_rate = self.learning_rate;
        config.max_iters = self.max_iters;
        config.seed = seed;
        if let Some(tol) = self.grad_tolerance {
            config.grad_tolerance = tol;
        }
        EstimationSpec {
            method: self.method,
            covariance: self.covariance,
            init: self.init,
            window: self.window,
            config,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMode {
    Fixed,
    Rolling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestSection {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_estimation_mode")]
    pub estimation: EstimationMode,
    #[serde(default = "default_weather_mode")]
    pub weather_mode: WeatherMode,
    pub max_abs_allocation: Option<f64>,
    /// Strategy parameters for the fixed mode.
    pub params_file: Option<PathBuf>,
    /// Relative noise applied to the fixed strategy's drift coefficients.
    #[serde(default)]
    pub perturbation: f64,
    #[serde(default)]
    pub perturb_covariance: bool,
    #[serde(default = "default_detail")]
    pub detail: PathDetail,
}

fn default_paths() -> usize {
    1000
}

fn default_estimation_mode() -> EstimationMode {
    EstimationMode::Fixed
}

fn default_weather_mode() -> WeatherMode {
    WeatherMode::SameDay
}

fn default_detail() -> PathDetail {
    PathDetail::Full
}

impl Default for BacktestSection {
    fn default() -> Self {
        BacktestSection {
            paths: default_paths(),
            estimation: default_estimation_mode(),
            weather_mode: default_weather_mode(),
            max_abs_allocation: None,
            params_file: None,
            perturbation: 0.0,
            perturb_covariance: false,
            detail: default_detail(),
        }
    }
}

/// Values given on the command line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub gamma: Option<f64>,
    pub z: Option<f64>,
    pub hour: Option<u8>,
    pub out: Option<PathBuf>,
    pub method: Option<EstimationMethod>,
}

/// Where the training data comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum Source<'a> {
    Data(&'a DataSection),
    Simulation(&'a SimulationSection),
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Reads the file, resolves relative paths against its directory and
    /// applies `overrides`.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.output_dir);
        if let Some(data) = &mut self.data {
            join(&mut data.da);
            join(&mut data.rt);
            join(&mut data.weather);
        }
        if let Some(p) = self.simulation.as_mut().and_then(|s| s.truth_file.as_mut()) {
            join(p);
        }
        if let Some(p) = &mut self.backtest.params_file {
            join(p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.paths {
            self.backtest.paths = v;
        }
        if let Some(v) = o.gamma {
            self.objective.gamma = v;
        }
        if let Some(v) = o.z {
            self.objective.z = v;
        }
        if let Some(v) = o.hour {
            self.hour = v;
        }
        if let Some(v) = &o.out {
            self.output_dir = v.clone();
        }
        if let Some(v) = o.method {
            self.estimator.method = v;
        }
    }

    pub fn source(&self) -> Result<Source<'_>> {
        match (&self.data, &self.simulation) {
            (Some(d), None) => Ok(Source::Data(d)),
            (None, Some(s)) => Ok(Source::Simulation(s)),
            _ => Err(Error::InvalidConfig(
                "exactly one of [data] and [simulation] must be present".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hour > 23 {
            return Err(Error::InvalidConfig(format!(
                "hour {} outside 0..=23",
                self.hour
            )));
        }
        if self.variables.iter().any(String::is_empty) {
            return Err(Error::InvalidConfig("empty variable name".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.variables.iter().find(|v| !seen.insert(v.as_str())) {
            return Err(Error::InvalidConfig(format!(
                "variable {dup:?} listed twice"
            )));
        }
        match self.source()? {
            Source::Data(d) => {
                for p in [&d.da, &d.rt, &d.weather] {
                    if !p.is_file() {
                        return Err(Error::io(
                            p,
                            std::io::Error::new(
                                std::io::ErrorKind::NotFound,
                                "input file not found",
                            ),
                        ));
                    }
                }
                if d.intervals_expected == 0 {
                    return Err(Error::InvalidConfig(
                        "intervals_expected must be positive".into(),
                    ));
                }
            }
            Source::Simulation(s) => {
                if s.days == 0 {
                    return Err(Error::InvalidConfig(
                        "simulation.days must be positive".into(),
                    ));
                }
                if let Some(p) = &s.truth_file {
                    if !p.is_file() {
                        return Err(Error::io(
                            p,
                            std::io::Error::new(
                                std::io::ErrorKind::NotFound,
                                "truth file not found",
                            ),
                        ));
                    }
                }
            }
        }
        if let Some(p) = &self.backtest.params_file {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "params file not found"),
                ));
            }
        }
        if !(self.backtest.perturbation >= 0.0) {
            return Err(Error::InvalidConfig(
                "backtest.perturbation must be >= 0".into(),
            ));
        }
        self.objective.to_objective(1).validate()?;
        self.backtest_config(1).validate()
    }

    pub fn ingest_options(&self, data: &DataSection) -> IngestOptions {
        IngestOptions {
            nodes: self.nodes.clone(),
            variables: self.variables.clone(),
            hour: self.hour,
            intervals_expected: data.intervals_expected,
            price_floor: data.price_floor,
        }
    }

    pub fn data_paths(data: &DataSection) -> DataPaths {
        DataPaths {
            da: data.da.clone(),
            rt: data.rt.clone(),
            weather: data.weather.clone(),
        }
    }

    pub fn backtest_config(&self, default_horizon: usize) -> BacktestConfig {
        BacktestConfig {
            objective: self.objective.to_objective(default_horizon),
            covariance_window: self.estimator.window,
            covariance_input: self.estimator.covariance_input,
            weather_mode: self.backtest.weather_mode,
            paths: self.backtest.paths,
            master_seed: self.seed,
            max_abs_allocation: self.backtest.max_abs_allocation,
            detail: self.backtest.detail,
        }
    }
}

/// Independent seed for one consumer of the master seed.
pub fn derive_seed(master: u64, purpose: SeedPurpose) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(1 << 32 | purpose as u64);
    rng.next_u64()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedPurpose {
    Weather = 1,
    Prices = 2,
    Truth = 3,
    Perturbation = 4,
}
