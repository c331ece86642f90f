use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::likelihood::{likelihood_gradient, log_likelihood};
use super::params::ParamVector;
use super::Observation;
use crate::error::{Error, Result};
use crate::market_model::{CovarianceModel, DriftParams, MarketParams};

/// Trailing window, in days, for the sample covariance.
pub const DEFAULT_COVARIANCE_WINDOW: usize = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Sup-norm threshold on the gradient.
    pub grad_tolerance: f64,
    /// Reserved for randomized initializations; the built-in ones are deterministic.
    pub seed: u64,
}

impl EstimatorConfig {
    /// Defaults with `grad_tolerance = 1e-6 · T`.
    pub fn for_sample_size(days: usize) -> Self {
        EstimatorConfig {
            learning_rate: 1.0,
            max_iters: 10_000,
            grad_tolerance: 1e-6 * days.max(1) as f64,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        if !(self.grad_tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "grad_tolerance must be positive, got {}",
                self.grad_tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub log_likelihood: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub params: ParamVector,
    pub trace: Vec<TracePoint>,
    pub converged: bool,
    pub iterations: usize,
}

/// Gradient ascent `φ ← φ + α ∂H/∂φ` with step halving until `H` increases.
///
/// Each trial step counts toward `max_iters`. The trial step for an
/// iteration starts at `min(α_cfg, 2·α_prev)`.
pub fn fit_gradient_ascent(
    phi0: &ParamVector,
    obs: &[Observation],
    cfg: &EstimatorConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    let mut phi = phi0.clone();
    let mut value = log_likelihood(&phi, obs)?;
    if !value.is_finite() {
        return Err(Error::Diverged {
            iteration: 0,
            last_finite: Box::new(phi),
        });
    }
    let mut trace = vec![TracePoint {
        iteration: 0,
        log_likelihood: value,
    }];
    let mut iterations = 0;
    let mut step = cfg.learning_rate;

    loop {
        let grad = likelihood_gradient(&phi, obs)?;
        if !grad.is_finite() {
            return Err(Error::Diverged {
                iteration: iterations,
                last_finite: Box::new(phi),
            });
        }
        if grad.sup_norm() <= cfg.grad_tolerance {
            return Ok(FitResult {
                params: phi,
                trace,
                converged: true,
                iterations,
            });
        }

        let mut alpha = step;
        let accepted = loop {
            if iterations >= cfg.max_iters {
                break None;
            }
            iterations += 1;
            let candidate = phi.step(&grad, alpha);
            if candidate.is_finite() {
                // a non-SPD or overflowing candidate is simply rejected
                if let Ok(v) = log_likelihood(&candidate, obs) {
                    if v.is_finite() && v > value {
                        break Some((candidate, v));
                    }
                }
            }
            alpha *= 0.5;
            if alpha * grad.sup_norm() == 0.0 {
                break None;
            }
        };

        match accepted {
            Some((candidate, v)) => {
                phi = candidate;
                value = v;
                trace.push(TracePoint {
                    iteration: iterations,
                    log_likelihood: value,
                });
                step = (2.0 * alpha).min(cfg.learning_rate);
            }
            None => {
                return Ok(FitResult {
                    params: phi,
                    trace,
                    converged: false,
                    iterations,
                })
            }
        }
    }
}

/// Per-node least squares of `f_t^i` on `(1, θ_t^i)`.
pub fn fit_ols(obs: &[Observation]) -> Result<DriftParams> {
    let first = obs.first().ok_or(Error::EmptyDataset)?;
    let (n, k) = (first.nodes(), first.variables());
    let days = obs.len();
    let mut coeffs = DMatrix::<f64>::zeros(n, k + 1);
    for node in 0..n {
        if days < k + 1 {
            return Err(Error::SingularDesign {
                node: format!("#{node}"),
            });
        }
        let design = DMatrix::from_fn(days, k + 1, |t, c| {
            if c == 0 {
                1.0
            } else {
                obs[t].weather.values()[(node, c - 1)]
            }
        });
        let target = DVector::from_fn(days, |t, _| obs[t].prices.values()[node]);
        let svd = design.svd(true, true);
        let (smax, smin) = svd
            .singular_values
            .iter()
            .fold((0.0_f64, f64::INFINITY), |(hi, lo), s| {
                (hi.max(*s), lo.min(*s))
            });
        if !(smin > 1e-12 * smax) {
            return Err(Error::SingularDesign {
                node: format!("#{node}"),
            });
        }
        let beta = svd.solve(&target, 0.0).map_err(|_| Error::SingularDesign {
            node: format!("#{node}"),
        })?;
        coeffs.set_row(node, &beta.transpose());
    }
    DriftParams::new(coeffs)
}

/// `f_t − b(θ_t)` for every observation.
pub fn residuals(drift: &DriftParams, obs: &[Observation]) -> Result<Vec<DVector<f64>>> {
    obs.iter()
        .map(|o| Ok(o.prices.values() - drift.evaluate(&o.weather)?))
        .collect()
}

/// Sample covariance (denominator `window − 1`) of the last `window` vectors,
/// with the default ridge.
pub fn trailing_covariance(vectors: &[DVector<f64>], window: usize) -> Result<CovarianceModel> {
    if window < 2 {
        return Err(Error::InvalidConfig(format!(
            "covariance window must be >= 2, got {window}"
        )));
    }
    if vectors.len() < window {
        return Err(Error::InsufficientHistory {
            required: window,
            available: vectors.len(),
        });
    }
    let recent = &vectors[vectors.len() - window..];
    let n = recent[0].len();
    let mut mean = DVector::<f64>::zeros(n);
    for v in recent {
        mean += v;
    }
    mean /= window as f64;
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for v in recent {
        let d = v - &mean;
        gram += &d * d.transpose();
    }
    gram /= (window - 1) as f64;
    CovarianceModel::with_default_ridge(gram)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// Drift-only ascent; Σ held at the diagonal of the trailing covariance.
    Fixed,
    /// Joint ascent over drift and the Cholesky factor of Σ.
    Cholesky,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    Ols,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMethod {
    Ols,
    #[serde(alias = "gradient")]
    Grad,
}

/// Starting point: drift at OLS (or zero), covariance from the trailing
/// window of OLS residuals.
pub fn initial_params(
    obs: &[Observation],
    mode: CovarianceMode,
    init: Initialization,
    window: usize,
) -> Result<ParamVector> {
    let ols = fit_ols(obs)?;
    let trailing = trailing_covariance(&residuals(&ols, obs)?, window)?;
    let drift = match init {
        Initialization::Ols => ols,
        Initialization::Zero => DriftParams::zeros(ols.nodes(), ols.variables()),
    };
    match mode {
        CovarianceMode::Fixed => ParamVector::drift_only(&drift, trailing.diagonal()?),
        CovarianceMode::Cholesky => ParamVector::with_cholesky(&drift, trailing.evaluate()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationSpec {
    pub method: EstimationMethod,
    pub covariance: CovarianceMode,
    pub init: Initialization,
    pub window: usize,
    pub config: EstimatorConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub params: MarketParams,
    pub trace: Vec<TracePoint>,
    pub converged: bool,
    pub iterations: usize,
}

/// Full fitting pipeline used by the command line.
///
/// The reported covariance is the trailing-window covariance of the fitted
/// residuals, except for the Cholesky mode where it is the fitted `L Lᵀ`.
pub fn estimate(obs: &[Observation], spec: &EstimationSpec) -> Result<Estimate> {
    match spec.method {
        EstimationMethod::Ols => {
            let drift = fit_ols(obs)?;
            let cov = trailing_covariance(&residuals(&drift, obs)?, spec.window)?;
            let phi = ParamVector::drift_only(&drift, cov.clone())?;
            let value = log_likelihood(&phi, obs)?;
            Ok(Estimate {
                params: MarketParams::new(drift, cov)?,
                trace: vec![TracePoint {
                    iteration: 0,
                    log_likelihood: value,
                }],
                converged: true,
                iterations: 0,
            })
        }
        EstimationMethod::Grad => {
            let phi0 = initial_params(obs, spec.covariance, spec.init, spec.window)?;
            let fit = fit_gradient_ascent(&phi0, obs, &spec.config)?;
            let parts = fit.params.unpack();
            let cov = match spec.covariance {
                CovarianceMode::Fixed => {
                    trailing_covariance(&residuals(&parts.drift, obs)?, spec.window)?
                }
                CovarianceMode::Cholesky => {
                    CovarianceModel::with_default_ridge(parts.covariance_matrix()?.into_matrix())?
                }
            };
            Ok(Estimate {
                params: MarketParams::new(parts.drift, cov)?,
                trace: fit.trace,
                converged: fit.converged,
                iterations: fit.iterations,
            })
        }
    }
}
