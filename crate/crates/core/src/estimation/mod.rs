//! Maximum-likelihood fitting of the price-difference model.
//!
//! The drift is the per-node affine weather map of [`crate::market_model`];
//! the covariance is either held fixed (drift-only layout) or parametrized by
//! a log-diagonal Cholesky factor so every iterate stays SPD.

mod fit;
mod likelihood;
mod params;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::market_model::{MeteoMatrix, PriceDiffVector};

pub use fit::{
    estimate, fit_gradient_ascent, fit_ols, initial_params, residuals, trailing_covariance,
    CovarianceMode, Estimate, EstimationMethod, EstimationSpec, EstimatorConfig, FitResult,
    Initialization, TracePoint, DEFAULT_COVARIANCE_WINDOW,
};
pub use likelihood::{
    check_gradient, check_gradient_with, likelihood_gradient, log_likelihood,
    relative_gradient_error, GradientCheck, GRADIENT_CHECK_ABS_FLOOR,
};
pub use params::{
    CholeskyParams, CovarianceLayout, CovarianceParams, ParamLayout, ParamVector, UnpackedParams,
};

/// One day's weather paired with the price differences it explains.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub weather: MeteoMatrix,
    pub prices: PriceDiffVector,
}

impl Observation {
    pub fn new(weather: MeteoMatrix, prices: PriceDiffVector) -> Result<Self> {
        if weather.nodes() != prices.len() {
            return Err(Error::DimensionMismatch {
                what: "observation",
                expected: format!("{} price differences", weather.nodes()),
                actual: prices.len().to_string(),
            });
        }
        Ok(Observation { weather, prices })
    }

    pub fn day(&self) -> NaiveDate {
        self.prices.day()
    }

    pub fn nodes(&self) -> usize {
        self.prices.len()
    }

    pub fn variables(&self) -> usize {
        self.weather.variables()
    }
}

/// Historical `(θ_t, f_t)` sample with strictly increasing dates.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    observations: Vec<Observation>,
}

impl TrainingSet {
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        let first = observations.first().ok_or(Error::EmptyDataset)?;
        let (n, k) = (first.nodes(), first.variables());
        for pair in observations.windows(2) {
            if pair[1].day() <= pair[0].day() {
                return Err(Error::InvalidInput(format!(
                    "training dates not strictly increasing: {} then {}",
                    pair[0].day(),
                    pair[1].day()
                )));
            }
        }
        for o in &observations {
            if o.weather.day() != o.prices.day() {
                return Err(Error::InvalidInput(format!(
                    "weather dated {} paired with prices dated {}",
                    o.weather.day(),
                    o.prices.day()
                )));
            }
            if o.nodes() != n || o.variables() != k {
                return Err(Error::DimensionMismatch {
                    what: "training set",
                    expected: format!("{n} nodes x {k} variables"),
                    actual: format!("{} nodes x {} variables", o.nodes(), o.variables()),
                });
            }
        }
        Ok(TrainingSet { observations })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn nodes(&self) -> usize {
        self.observations[0].nodes()
    }

    pub fn variables(&self) -> usize {
        self.observations[0].variables()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.observations.iter().map(Observation::day).collect()
    }

    pub fn position(&self, day: NaiveDate) -> Option<usize> {
        self.observations
            .binary_search_by_key(&day, Observation::day)
            .ok()
    }
}

#[cfg(test)]
mod tests;
