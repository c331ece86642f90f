//! Synthetic weather and price-difference generator with known ground truth.

use std::io::Write;

use chrono::{Days, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{Observation, TrainingSet};
use crate::ingest::Dataset;
use crate::market_model::{
    CovarianceModel, DriftParams, MarketParams, MeteoMatrix, NodeSet, PriceDiffVector,
};
use crate::policy::standard_normals;

/// `x_t = mean + φ (x_{t−1} − mean) + s ε_t`, started at `x_{−1} = mean`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ar1Params {
    pub mean: f64,
    pub persistence: f64,
    pub innovation_sd: f64,
}

impl Ar1Params {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.persistence) {
            return Err(Error::InvalidConfig(format!(
                "AR(1) persistence must lie in [0, 1), got {}",
                self.persistence
            )));
        }
        if !(self.innovation_sd >= 0.0) || !self.innovation_sd.is_finite() || !self.mean.is_finite()
        {
            return Err(Error::InvalidConfig(format!(
                "invalid AR(1) parameters {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeatherProcessConfig {
    /// Row-major `n × k` table of per-(node, variable) processes.
    pub processes: Vec<Vec<Ar1Params>>,
    pub seed: u64,
    pub start_date: NaiveDate,
    pub hour: u8,
}

impl WeatherProcessConfig {
    /// Same process for every (node, variable).
    pub fn uniform(
        nodes: usize,
        variables: usize,
        process: Ar1Params,
        seed: u64,
        start_date: NaiveDate,
        hour: u8,
    ) -> Self {
        WeatherProcessConfig {
            processes: vec![vec![process; variables]; nodes],
            seed,
            start_date,
            hour,
        }
    }

    pub fn nodes(&self) -> usize {
        self.processes.len()
    }

    pub fn variables(&self) -> usize {
        self.processes.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.processes.is_empty() {
            return Err(Error::InvalidConfig(
                "weather process needs at least one node".into(),
            ));
        }
        let k = self.variables();
        for row in &self.processes {
            if row.len() != k {
                return Err(Error::InvalidConfig(
                    "weather process rows differ in length".into(),
                ));
            }
            row.iter().try_for_each(Ar1Params::validate)?;
        }
        if self.hour > 23 {
            return Err(Error::InvalidConfig(format!(
                "hour {} outside 0..=23",
                self.hour
            )));
        }
        Ok(())
    }
}

/// `days` consecutive calendar days of weather starting at `cfg.start_date`.
pub fn simulate_weather(cfg: &WeatherProcessConfig, days: usize) -> Result<Vec<MeteoMatrix>> {
    cfg.validate()?;
    if days == 0 {
        return Err(Error::InvalidInput("cannot simulate zero days".into()));
    }
    let (n, k) = (cfg.nodes(), cfg.variables());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = DMatrix::from_fn(n, k, |i, j| cfg.processes[i][j].mean);
    let mut out = Vec::with_capacity(days);
    for t in 0..days {
        for i in 0..n {
            for j in 0..k {
                let p = cfg.processes[i][j];
                let eps: f64 = rng.sample(rand_distr::StandardNormal);
                state[(i, j)] =
                    p.mean + p.persistence * (state[(i, j)] - p.mean) + p.innovation_sd * eps;
            }
        }
        out.push(MeteoMatrix::new(
            day_offset(cfg.start_date, t)?,
            cfg.hour,
            state.clone(),
        )?);
    }
    Ok(out)
}

fn day_offset(start: NaiveDate, t: usize) -> Result<NaiveDate> {
    start
        .checked_add_days(Days::new(t as u64))
        .ok_or_else(|| Error::InvalidInput("simulated calendar overflowed".into()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedMarket {
    pub observations: Vec<Observation>,
    pub truth: MarketParams,
    pub seed: u64,
}

impl SimulatedMarket {
    pub fn training_set(&self) -> Result<TrainingSet> {
        TrainingSet::new(self.observations.clone())
    }

    pub fn weather(&self) -> Vec<MeteoMatrix> {
        self.observations
            .iter()
            .map(|o| o.weather.clone())
            .collect()
    }

    pub fn into_dataset(self, nodes: NodeSet, variables: Vec<String>) -> Result<Dataset> {
        let hour = self
            .observations
            .first()
            .ok_or(Error::EmptyDataset)?
            .weather
            .hour();
        if nodes.len() != self.truth.nodes() || variables.len() != self.truth.variables() {
            return Err(Error::DimensionMismatch {
                what: "simulated dataset labels",
                expected: format!(
                    "{} nodes x {} variables",
                    self.truth.nodes(),
                    self.truth.variables()
                ),
                actual: format!("{} nodes x {} variables", nodes.len(), variables.len()),
            });
        }
        Ok(Dataset {
            nodes,
            variables,
            hour,
            training: TrainingSet::new(self.observations)?,
        })
    }
}

/// `f_t = b(θ_t) + L ξ_t` with `L` the Cholesky factor of the truth covariance.
pub fn simulate_prices(
    truth: &MarketParams,
    weather: &[MeteoMatrix],
    seed: u64,
) -> Result<SimulatedMarket> {
    let factor = truth.covariance().evaluate().factor();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut observations = Vec::with_capacity(weather.len());
    for theta in weather {
        let b = truth.drift().evaluate(theta)?;
        let f = b + &factor * standard_normals(truth.nodes(), &mut rng);
        let prices = PriceDiffVector::new(theta.day(), theta.hour(), f)?;
        observations.push(Observation::new(theta.clone(), prices)?);
    }
    Ok(SimulatedMarket {
        observations,
        truth: truth.clone(),
        seed,
    })
}

/// Ranges for [`random_truth`]. Each magnitude is drawn uniformly and given a random sign.
///
/// With weather anomalies of a few units the defaults give a daily
/// `ρ = bᵀΣ⁻¹b` around 0.01 for three nodes, so `ρT` stays near 1 over a quarter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRanges {
    pub intercept: (f64, f64),
    pub slope: (f64, f64),
    pub variance: (f64, f64),
    /// Common correlation between every pair of nodes.
    pub correlation: f64,
}

impl Default for TruthRanges {
    fn default() -> Self {
        TruthRanges {
            intercept: (0.005, 0.015),
            slope: (0.0005, 0.0015),
            variance: (0.05, 0.1),
            correlation: 0.2,
        }
    }
}

pub fn random_truth<R: Rng + ?Sized>(
    nodes: usize,
    variables: usize,
    ranges: &TruthRanges,
    rng: &mut R,
) -> Result<MarketParams> {
    let lower = if nodes > 1 {
        -1.0 / (nodes as f64 - 1.0)
    } else {
        -1.0
    };
    if !(ranges.correlation > lower && ranges.correlation < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "correlation {} does not give a positive definite matrix",
            ranges.correlation
        )));
    }
    let signed = |(lo, hi): (f64, f64), rng: &mut R| {
        let m = rng.random_range(lo..=hi);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    };
    let coefficients = DMatrix::from_fn(nodes, variables + 1, |_, c| {
        if c == 0 {
            signed(ranges.intercept, rng)
        } else {
            signed(ranges.slope, rng)
        }
    });
    let sd: Vec<f64> = (0..nodes)
        .map(|_| {
            rng.random_range(ranges.variance.0..=ranges.variance.1)
                .sqrt()
        })
        .collect();
    let sigma = DMatrix::from_fn(nodes, nodes, |i, j| {
        let c = if i == j { 1.0 } else { ranges.correlation };
        c * sd[i] * sd[j]
    });
    MarketParams::new(
        DriftParams::new(coefficients)?,
        CovarianceModel::new(sigma, 0.0)?,
    )
}

/// Multiplies every drift coefficient by `1 + scale·ε` with `ε` standard
/// normal. With `covariance` set, also replaces `Σ` by `D Σ D` with
/// `D = diag(1 + scale·ε)`.
pub fn perturb_params<R: Rng + ?Sized>(
    truth: &MarketParams,
    scale: f64,
    covariance: bool,
    rng: &mut R,
) -> Result<MarketParams> {
    if !(scale >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "perturbation scale must be >= 0, got {scale}"
        )));
    }
    let c = truth.drift().coefficients();
    let noise = standard_normals(c.len(), rng);
    let perturbed = DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| {
        c[(i, j)] * (1.0 + scale * noise[i * c.ncols() + j])
    });
    let cov = truth.covariance();
    let cov = if covariance {
        let d = DVector::from_fn(cov.nodes(), |_, _| {
            1.0 + scale * rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let raw = DMatrix::from_fn(cov.nodes(), cov.nodes(), |i, j| {
            d[i] * cov.raw()[(i, j)] * d[j]
        });
        CovarianceModel::new(raw, cov.ridge())?
    } else {
        cov.clone()
    };
    MarketParams::new(DriftParams::new(perturbed)?, cov)
}

/// Writes the market as day-ahead, real-time and weather CSVs.
///
/// Prices are `base·e^{f/2}` day-ahead and `base·e^{−f/2}` for every
/// real-time interval, so ingestion recovers `f` up to rounding.
pub fn export_csv<W1: Write, W2: Write, W3: Write>(
    data: &Dataset,
    base_price: f64,
    intervals: u32,
    da: W1,
    rt: W2,
    weather: W3,
) -> Result<()> {
    let fail = |e: csv::Error| Error::InvalidInput(format!("writing simulated csv: {e}"));
    let mut da = csv::Writer::from_writer(da);
    let mut rt = csv::Writer::from_writer(rt);
    let mut wx = csv::Writer::from_writer(weather);
    da.write_record(crate::ingest::DA_HEADER).map_err(fail)?;
    rt.write_record(crate::ingest::RT_HEADER).map_err(fail)?;
    wx.write_record(crate::ingest::WEATHER_HEADER)
        .map_err(fail)?;
    for o in data.observations() {
        let date = o.day().format("%Y-%m-%d").to_string();
        let hour = o.prices.hour().to_string();
        for (i, id) in data.nodes.ids().iter().enumerate() {
            let f = o.prices.values()[i];
            da.write_record([
                &date,
                &hour,
                id,
                &(base_price * (f / 2.0).exp()).to_string(),
            ])
            .map_err(fail)?;
            let rt_price = (base_price * (-f / 2.0).exp()).to_string();
            for interval in 1..=intervals {
                rt.write_record([&date, &hour, &interval.to_string(), id, &rt_price])
                    .map_err(fail)?;
            }
            for (j, var) in data.variables.iter().enumerate() {
                wx.write_record([
                    &date,
                    &hour,
                    id,
                    var,
                    &o.weather.values()[(i, j)].to_string(),
                ])
                .map_err(fail)?;
            }
        }
    }
    for w in [da.flush(), rt.flush(), wx.flush()] {
        w.map_err(|e| Error::InvalidInput(format!("writing simulated csv: {e}")))?;
    }
    Ok(())
}
