//! Daily trading loop, Monte Carlo evaluation and reports.
//!
//! Each trading day the strategy evaluates its `(b, Σ)`, builds the
//! closed-form policy, samples an allocation and settles it against the
//! realized price differences: `X ← X + qᵀf`. Days whose drift carries no
//! signal (`ρ` at or below the floor) are traded flat and flagged.
//!
//! Randomness is split into per-path streams of one ChaCha8 generator
//! seeded with the master seed: stream `2p` samples the policy of path `p`
//! and stream `2p + 1` draws its market noise in Monte Carlo runs. Paths run
//! in parallel and are aggregated in path order, so reports are bitwise
//! reproducible regardless of thread count.

use std::io::Write;

use chrono::{Datelike, NaiveDate};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    fit_ols, residuals, trailing_covariance, Observation, TrainingSet, DEFAULT_COVARIANCE_WINDOW,
};
use crate::ingest::ExclusionLog;
use crate::linalg::SpdMatrix;
use crate::market_model::{DriftParams, MarketParams, MeteoMatrix, PriceDiffVector};
use crate::policy::{
    signal_strength, standard_normals, Allocation, ClosedFormPolicy, ObjectiveConfig, WealthState,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherMode {
    /// Drift evaluated on the delivery day's own weather row.
    SameDay,
    /// Drift evaluated on the following row's weather, as a perfect forecast.
    NextDay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceInput {
    /// Trailing covariance of `f − b(θ)` under the current drift.
    Residuals,
    /// Trailing covariance of the raw `f`.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathDetail {
    /// Wealth, allocation and policy moments for every day.
    Full,
    /// Terminal wealth only.
    Terminal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub objective: ObjectiveConfig,
    pub covariance_window: usize,
    pub covariance_input: CovarianceInput,
    pub weather_mode: WeatherMode,
    pub paths: usize,
    pub master_seed: u64,
    /// Optional per-node dollar cap applied after sampling.
    pub max_abs_allocation: Option<f64>,
    pub detail: PathDetail,
}

impl BacktestConfig {
    pub fn new(objective: ObjectiveConfig) -> Self {
        BacktestConfig {
            objective,
            covariance_window: DEFAULT_COVARIANCE_WINDOW,
            covariance_input: CovarianceInput::Residuals,
            weather_mode: WeatherMode::SameDay,
            paths: 1,
            master_seed: 0,
            max_abs_allocation: None,
            detail: PathDetail::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if self.covariance_window < 2 {
            return Err(Error::InvalidConfig(format!(
                "covariance window must be >= 2, got {}",
                self.covariance_window
            )));
        }
        if self.paths == 0 {
            return Err(Error::InvalidConfig("paths must be >= 1".into()));
        }
        if let Some(cap) = self.max_abs_allocation {
            if !(cap > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "max_abs_allocation must be positive, got {cap}"
                )));
            }
        }
        Ok(())
    }
}

/// Where the strategy's parameters come from.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamsSource {
    Fixed(MarketParams),
    /// OLS drift refit at each new calendar month on all earlier days,
    /// covariance recomputed daily over the trailing window. The first
    /// `covariance_window` days are warm-up and are not traded.
    Rolling,
}

/// `X + qᵀf`.
pub fn step_wealth(wealth: f64, q: &Allocation, f: &PriceDiffVector) -> Result<f64> {
    if q.values().len() != f.len() {
        return Err(Error::DimensionMismatch {
            what: "allocation",
            expected: f.len().to_string(),
            actual: q.values().len().to_string(),
        });
    }
    Ok(wealth + q.values().dot(f.values()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WealthPath {
    pub terminal_wealth: f64,
    /// Wealth after each trading day.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub wealth: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub allocations: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub policy_means: Vec<Vec<f64>>,
    /// Diagonal of the policy covariance.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub policy_variances: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalStats {
    pub mean: f64,
    /// Sample variance with denominator `paths − 1`; zero for a single path.
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

impl TerminalStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("no terminal wealth values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Ok(TerminalStats {
            mean,
            variance,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaySummary {
    pub date: NaiveDate,
    pub rho: f64,
    /// Lagrange multiplier `w`; absent on degenerate days.
    pub multiplier: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    /// Every path trades the same realized prices.
    Historical,
    /// Every path draws its own prices from the truth model.
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub config: BacktestConfig,
    pub seed: u64,
    pub kind: RunKind,
    pub rolling: bool,
    pub initial_wealth: f64,
    pub days: Vec<DaySummary>,
    pub degenerate_dates: Vec<NaiveDate>,
    pub statistics: TerminalStats,
    pub paths: Vec<WealthPath>,
    #[serde(default)]
    pub exclusions: ExclusionLog,
}

impl BacktestReport {
    pub fn terminal_wealth(&self) -> Vec<f64> {
        self.paths.iter().map(|p| p.terminal_wealth).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidInput(format!("serializing report: {e}")))
    }

    /// Parses a report and checks that the stored statistics match the
    /// stored paths exactly.
    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        let report: BacktestReport = serde_json::from_str(text).map_err(|e| Error::Json {
            path: source.into(),
            source: e,
        })?;
        let recomputed = TerminalStats::from_values(&report.terminal_wealth())?;
        if !same_bits(&recomputed, &report.statistics) {
            return Err(Error::InvalidInput(format!(
                "{source}: stored statistics {:?} do not match the stored paths {:?}",
                report.statistics, recomputed
            )));
        }
        Ok(report)
    }

    /// Long-format `path,date,wealth`; the first row of each path is the
    /// initial wealth dated one day before the first trading day.
    pub fn write_wealth_csv<W: Write>(&self, out: W) -> Result<()> {
        let fail = |e: csv::Error| Error::InvalidInput(format!("writing wealth paths: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path", "date", "wealth"]).map_err(fail)?;
        let Some(first) = self.days.first() else {
            return w.flush().map_err(|e| Error::InvalidInput(e.to_string()));
        };
        let start = first.date.pred_opt().unwrap_or(first.date);
        for (p, path) in self.paths.iter().enumerate() {
            let p = p.to_string();
            w.write_record([
                p.as_str(),
                &start.to_string(),
                &self.initial_wealth.to_string(),
            ])
            .map_err(fail)?;
            if path.wealth.is_empty() {
                let last = self.days.last().map_or(start, |d| d.date);
                w.write_record([
                    p.as_str(),
                    &last.to_string(),
                    &path.terminal_wealth.to_string(),
                ])
                .map_err(fail)?;
            } else {
                for (day, x) in self.days.iter().zip(&path.wealth) {
                    w.write_record([p.as_str(), &day.date.to_string(), &x.to_string()])
                        .map_err(fail)?;
                }
            }
        }
        w.flush()
            .map_err(|e| Error::InvalidInput(format!("writing wealth paths: {e}")))
    }
}

fn same_bits(a: &TerminalStats, b: &TerminalStats) -> bool {
    [
        (a.mean, b.mean),
        (a.variance, b.variance),
        (a.min, b.min),
        (a.max, b.max),
    ]
    .iter()
    .all(|(x, y)| x.to_bits() == y.to_bits())
}

/// One trading day's strategy inputs.
struct DayPlan {
    summary: DaySummary,
    policy: Option<ClosedFormPolicy>,
}

fn plan_day(
    date: NaiveDate,
    drift: &DVector<f64>,
    sigma: &SpdMatrix,
    objective: &ObjectiveConfig,
) -> Result<DayPlan> {
    let rho = signal_strength(drift, sigma).map_err(|e| e.on_day(date))?;
    let policy = match ClosedFormPolicy::new(drift, sigma, objective) {
        Ok(p) => Some(p),
        Err(Error::DegenerateDrift { .. }) => None,
        Err(e) => return Err(e.on_day(date)),
    };
    Ok(DayPlan {
        summary: DaySummary {
            date,
            rho,
            multiplier: policy.as_ref().map(ClosedFormPolicy::multiplier),
        },
        policy,
    })
}

fn strategy_weather(weather: &[&MeteoMatrix], t: usize, mode: WeatherMode) -> MeteoMatrix {
    match mode {
        WeatherMode::SameDay => weather[t].clone(),
        WeatherMode::NextDay => weather.get(t + 1).copied().unwrap_or(weather[t]).clone(),
    }
}

fn fixed_plans(
    params: &MarketParams,
    dates: &[NaiveDate],
    weather: &[&MeteoMatrix],
    cfg: &BacktestConfig,
) -> Result<Vec<DayPlan>> {
    let sigma = params.covariance().evaluate();
    (0..dates.len())
        .map(|t| {
            let theta = strategy_weather(weather, t, cfg.weather_mode);
            let b = params
                .drift()
                .evaluate(&theta)
                .map_err(|e| e.on_day(dates[t]))?;
            plan_day(dates[t], &b, sigma, &cfg.objective)
        })
        .collect()
}

/// Returns the index of the first traded observation and the plans.
fn rolling_plans(obs: &[Observation], cfg: &BacktestConfig) -> Result<(usize, Vec<DayPlan>)> {
    let window = cfg.covariance_window;
    if obs.len() <= window {
        return Err(Error::InsufficientHistory {
            required: window + 1,
            available: obs.len(),
        });
    }
    let weather: Vec<&MeteoMatrix> = obs.iter().map(|o| &o.weather).collect();
    let mut current: Option<(DriftParams, (i32, u32))> = None;
    let mut plans = Vec::with_capacity(obs.len() - window);
    for t in window..obs.len() {
        let date = obs[t].day();
        let month = (date.year(), date.month());
        if current.as_ref().is_none_or(|(_, m)| *m != month) {
            let drift = fit_ols(&obs[..t]).map_err(|e| e.on_day(date))?;
            current = Some((drift, month));
        }
        let drift = &current.as_ref().expect("drift fitted above").0;
        let recent = &obs[t - window..t];
        let vectors = match cfg.covariance_input {
            CovarianceInput::Residuals => residuals(drift, recent)?,
            CovarianceInput::Raw => recent.iter().map(|o| o.prices.values().clone()).collect(),
        };
        let cov = trailing_covariance(&vectors, window).map_err(|e| e.on_day(date))?;
        let theta = strategy_weather(&weather, t, cfg.weather_mode);
        let b = drift.evaluate(&theta).map_err(|e| e.on_day(date))?;
        plans.push(plan_day(date, &b, cov.evaluate(), &cfg.objective)?);
    }
    Ok((window, plans))
}

fn check_horizon(steps: usize, dt: f64, objective: &ObjectiveConfig) -> Result<()> {
    let last = steps.saturating_sub(1) as f64 * dt;
    if last > objective.horizon {
        return Err(Error::InvalidConfig(format!(
            "{steps} trading steps of length {dt} exceed the horizon {}",
            objective.horizon
        )));
    }
    Ok(())
}

fn path_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Runs one path over `plans`, drawing step `k`'s price differences from `market`.
fn run_path<M>(
    plans: &[DayPlan],
    nodes: usize,
    dt: f64,
    cfg: &BacktestConfig,
    path: u64,
    mut market: M,
) -> Result<WealthPath>
where
    M: FnMut(usize) -> DVector<f64>,
{
    let full = cfg.detail == PathDetail::Full;
    let mut rng = path_rng(cfg.master_seed, 2 * path);
    let mut wealth = cfg.objective.initial_wealth;
    let mut out = WealthPath {
        terminal_wealth: wealth,
        wealth: Vec::new(),
        allocations: Vec::new(),
        policy_means: Vec::new(),
        policy_variances: Vec::new(),
    };
    for (k, plan) in plans.iter().enumerate() {
        let elapsed = k as f64 * dt;
        let state = WealthState { wealth, elapsed };
        let (q, mean, variance) = match &plan.policy {
            Some(policy) => {
                let q = policy
                    .sample(state, &mut rng)
                    .map_err(|e| e.on_day(plan.summary.date))?;
                let q = match cfg.max_abs_allocation {
                    Some(cap) => q.capped(cap),
                    None => q,
                };
                let (mean, variance) = if full {
                    let scale = policy.variance_scale(elapsed)?;
                    (
                        policy.mean_at(wealth).iter().copied().collect(),
                        policy
                            .precision()
                            .matrix()
                            .diagonal()
                            .iter()
                            .map(|v| v * scale)
                            .collect(),
                    )
                } else {
                    (Vec::new(), Vec::new())
                };
                (q, mean, variance)
            }
            None if full => (Allocation::flat(nodes), vec![0.0; nodes], vec![0.0; nodes]),
            None => (Allocation::flat(nodes), Vec::new(), Vec::new()),
        };
        let f = market(k);
        if f.len() != q.values().len() {
            return Err(Error::DimensionMismatch {
                what: "allocation",
                expected: f.len().to_string(),
                actual: q.values().len().to_string(),
            }
            .on_day(plan.summary.date));
        }
        wealth += q.values().dot(&f);
        if full {
            out.wealth.push(wealth);
            out.allocations.push(q.values().iter().copied().collect());
            out.policy_means.push(mean);
            out.policy_variances.push(variance);
        }
    }
    out.terminal_wealth = wealth;
    Ok(out)
}

fn assemble(
    cfg: &BacktestConfig,
    kind: RunKind,
    rolling: bool,
    plans: &[DayPlan],
    paths: Vec<WealthPath>,
) -> Result<BacktestReport> {
    let terminal: Vec<f64> = paths.iter().map(|p| p.terminal_wealth).collect();
    Ok(BacktestReport {
        config: cfg.clone(),
        seed: cfg.master_seed,
        kind,
        rolling,
        initial_wealth: cfg.objective.initial_wealth,
        days: plans.iter().map(|p| p.summary).collect(),
        degenerate_dates: plans
            .iter()
            .filter(|p| p.policy.is_none())
            .map(|p| p.summary.date)
            .collect(),
        statistics: TerminalStats::from_values(&terminal)?,
        paths,
        exclusions: ExclusionLog::new(),
    })
}

/// Trades the strategy over realized history; every path sees the same prices.
pub fn run_backtest(
    data: &TrainingSet,
    source: &ParamsSource,
    cfg: &BacktestConfig,
) -> Result<BacktestReport> {
    cfg.validate()?;
    let obs = data.observations();
    let (first, plans) = match source {
        ParamsSource::Fixed(params) => {
            if params.nodes() != data.nodes() || params.variables() != data.variables() {
                return Err(Error::DimensionMismatch {
                    what: "backtest parameters",
                    expected: format!("{} nodes x {} variables", data.nodes(), data.variables()),
                    actual: format!(
                        "{} nodes x {} variables",
                        params.nodes(),
                        params.variables()
                    ),
                });
            }
            let weather: Vec<&MeteoMatrix> = obs.iter().map(|o| &o.weather).collect();
            (0, fixed_plans(params, &data.dates(), &weather, cfg)?)
        }
        ParamsSource::Rolling => rolling_plans(obs, cfg)?,
    };
    check_horizon(plans.len(), 1.0, &cfg.objective)?;
    let traded = &obs[first..];
    let paths = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|p| {
            run_path(&plans, data.nodes(), 1.0, cfg, p, |k| {
                traded[k].prices.values().clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(
        cfg,
        RunKind::Historical,
        matches!(source, ParamsSource::Rolling),
        &plans,
        paths,
    )
}

/// Market model in which each Monte Carlo path draws fresh prices.
#[derive(Clone, Debug)]
pub struct MonteCarloEnvironment {
    pub truth: MarketParams,
    /// One weather matrix per step.
    pub weather: Vec<MeteoMatrix>,
    /// Step length; `b` and `Σ` are per unit time.
    pub dt: f64,
}

/// Each path draws `f_k = b(θ_k) dt + √dt L ξ_k` from the truth model and
/// trades the policy built from `strategy`.
pub fn run_monte_carlo(
    env: &MonteCarloEnvironment,
    strategy: &MarketParams,
    cfg: &BacktestConfig,
) -> Result<BacktestReport> {
    cfg.validate()?;
    if !(env.dt > 0.0) || !env.dt.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "step length must be positive, got {}",
            env.dt
        )));
    }
    if env.weather.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if strategy.nodes() != env.truth.nodes() || strategy.variables() != env.truth.variables() {
        return Err(Error::DimensionMismatch {
            what: "strategy parameters",
            expected: format!(
                "{} nodes x {} variables",
                env.truth.nodes(),
                env.truth.variables()
            ),
            actual: format!(
                "{} nodes x {} variables",
                strategy.nodes(),
                strategy.variables()
            ),
        });
    }
    check_horizon(env.weather.len(), env.dt, &cfg.objective)?;
    let dates: Vec<NaiveDate> = env.weather.iter().map(MeteoMatrix::day).collect();
    let weather: Vec<&MeteoMatrix> = env.weather.iter().collect();
    let plans = fixed_plans(strategy, &dates, &weather, cfg)?;
    let truth_drift = env
        .weather
        .iter()
        .map(|theta| Ok(env.truth.drift().evaluate(theta)? * env.dt))
        .collect::<Result<Vec<_>>>()?;
    let noise_factor = env.truth.covariance().evaluate().factor() * env.dt.sqrt();
    let n = env.truth.nodes();
    let paths = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut noise = path_rng(cfg.master_seed, 2 * p + 1);
            run_path(&plans, n, env.dt, cfg, p, |k| {
                &truth_drift[k] + &noise_factor * standard_normals(n, &mut noise)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(cfg, RunKind::MonteCarlo, false, &plans, paths)
}

/// Largest peak-to-trough fall in dollars along `initial, wealth…`.
pub fn max_drawdown(initial: f64, wealth: &[f64]) -> f64 {
    let mut peak = initial;
    let mut worst = 0.0_f64;
    for &x in wealth {
        peak = peak.max(x);
        worst = worst.max(peak - x);
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub paths: usize,
    pub mean: f64,
    pub variance: f64,
    /// `sqrt(variance / paths)`.
    pub standard_error: f64,
    pub min: f64,
    pub max: f64,
    pub max_drawdowns: Vec<f64>,
    /// `w` of the first non-degenerate day, or `z` if every day was degenerate.
    pub multiplier: f64,
    /// `E[(X_T − w)²] − (w − z)²` with the expectation taken over paths.
    pub objective: f64,
}

pub fn summarize(report: &BacktestReport) -> Summary {
    let terminal = report.terminal_wealth();
    let n = terminal.len();
    let stats = report.statistics;
    let z = report.config.objective.target_wealth;
    let w = report.days.iter().find_map(|d| d.multiplier).unwrap_or(z);
    let second = terminal.iter().map(|x| (x - w) * (x - w)).sum::<f64>() / n.max(1) as f64;
    Summary {
        paths: n,
        mean: stats.mean,
        variance: stats.variance,
        standard_error: (stats.variance / n.max(1) as f64).sqrt(),
        min: stats.min,
        max: stats.max,
        max_drawdowns: report
            .paths
            .iter()
            .map(|p| {
                if p.wealth.is_empty() {
                    max_drawdown(report.initial_wealth, &[p.terminal_wealth])
                } else {
                    max_drawdown(report.initial_wealth, &p.wealth)
                }
            })
            .collect(),
        multiplier: w,
        objective: second - (w - z) * (w - z),
    }
}
