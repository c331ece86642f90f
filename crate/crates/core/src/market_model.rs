//! Price-difference model: `f_t = b(θ_t) + σ ΔW_t` with `Σ = σσᵀ`.
//!
//! Node ordering fixed by [`NodeSet`] defines the component order of every
//! vector and matrix in the crate. The drift of node `i` is an affine function
//! of that node's own weather row.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SpdMatrix};

/// Default lower bound on an admissible LMP, $/MWh.
pub const DEFAULT_PRICE_FLOOR: f64 = 0.01;

/// Default ridge scale: `ridge = DEFAULT_RIDGE_SCALE * trace(Σ) / n`.
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-8;

/// Absolute ridge floor used when the trace is zero.
pub const RIDGE_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct NodeSet {
    ids: Vec<String>,
}

impl NodeSet {
    pub fn new<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        if ids.is_empty() {
            return Err(Error::InvalidConfig("node set is empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate node id {id:?}")));
            }
        }
        Ok(NodeSet { ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|n| n == id)
    }
}

impl TryFrom<Vec<String>> for NodeSet {
    type Error = Error;

    fn try_from(ids: Vec<String>) -> Result<Self> {
        NodeSet::new(ids)
    }
}

impl From<NodeSet> for Vec<String> {
    fn from(nodes: NodeSet) -> Self {
        nodes.ids
    }
}

fn check_hour(hour: u8) -> Result<()> {
    if hour > 23 {
        return Err(Error::InvalidInput(format!("hour {hour} outside 0..=23")));
    }
    Ok(())
}

/// Weather observations for one day at the fixed delivery hour, one row per node.
#[derive(Clone, Debug, PartialEq)]
pub struct MeteoMatrix {
    day: NaiveDate,
    hour: u8,
    values: DMatrix<f64>,
}

impl MeteoMatrix {
    pub fn new(day: NaiveDate, hour: u8, values: DMatrix<f64>) -> Result<Self> {
        check_hour(hour)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite weather value on {day}"
            )));
        }
        Ok(MeteoMatrix { day, hour, values })
    }

    pub fn day(&self) -> NaiveDate {
        self.day
    }

    pub fn hour(&self) -> u8 {
        self.hour
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn variables(&self) -> usize {
        self.values.ncols()
    }
}

/// Per-node `log(DA) − log(RT)` for one day.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceDiffVector {
    day: NaiveDate,
    hour: u8,
    values: DVector<f64>,
}

impl PriceDiffVector {
    pub fn new(day: NaiveDate, hour: u8, values: DVector<f64>) -> Result<Self> {
        check_hour(hour)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite price difference on {day}"
            )));
        }
        Ok(PriceDiffVector { day, hour, values })
    }

    pub fn day(&self) -> NaiveDate {
        self.day
    }

    pub fn hour(&self) -> u8 {
        self.hour
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Drift coefficients, `n × (k+1)`: column 0 is the intercept, column `j+1`
/// multiplies weather variable `j` of the same node.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftParams {
    coefficients: DMatrix<f64>,
}

impl DriftParams {
    pub fn new(coefficients: DMatrix<f64>) -> Result<Self> {
        if coefficients.ncols() == 0 || coefficients.nrows() == 0 {
            return Err(Error::InvalidInput(
                "drift coefficient matrix is empty".into(),
            ));
        }
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite drift coefficient".into()));
        }
        Ok(DriftParams { coefficients })
    }

    pub(crate) fn from_unchecked(coefficients: DMatrix<f64>) -> Self {
        DriftParams { coefficients }
    }

    pub fn zeros(nodes: usize, variables: usize) -> Self {
        DriftParams {
            coefficients: DMatrix::zeros(nodes, variables + 1),
        }
    }

    /// Intercept-only drift.
    pub fn constant(intercepts: &DVector<f64>, variables: usize) -> Result<Self> {
        let mut c = DMatrix::zeros(intercepts.len(), variables + 1);
        c.set_column(0, intercepts);
        DriftParams::new(c)
    }

    pub fn nodes(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn variables(&self) -> usize {
        self.coefficients.ncols() - 1
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn intercepts(&self) -> DVector<f64> {
        self.coefficients.column(0).into_owned()
    }

    /// `b_i = c_{i,0} + Σ_j c_{i,j+1} θ_{i,j}`.
    pub fn evaluate(&self, weather: &MeteoMatrix) -> Result<DVector<f64>> {
        let (n, k) = (self.nodes(), self.variables());
        let w = weather.values();
        if w.nrows() != n || w.ncols() != k {
            return Err(Error::DimensionMismatch {
                what: "weather matrix",
                expected: format!("{n}x{k}"),
                actual: format!("{}x{}", w.nrows(), w.ncols()),
            });
        }
        Ok(DVector::from_fn(n, |i, _| {
            let mut b = self.coefficients[(i, 0)];
            for j in 0..k {
                b += self.coefficients[(i, j + 1)] * w[(i, j)];
            }
            b
        }))
    }
}

/// Constant covariance `Σ` of the price differences, ridged once at construction.
#[derive(Clone, Debug)]
pub struct CovarianceModel {
    raw: DMatrix<f64>,
    ridge: f64,
    ridged: SpdMatrix,
}

impl CovarianceModel {
    pub fn new(matrix: DMatrix<f64>, ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0) || !ridge.is_finite() {
            return Err(Error::InvalidInput(format!(
                "ridge {ridge} must be finite and >= 0"
            )));
        }
        let ridged = SpdMatrix::with_ridge(&matrix, ridge)?;
        Ok(CovarianceModel {
            raw: linalg::symmetrize(&matrix),
            ridge,
            ridged,
        })
    }

    /// Ridge `1e-8 · trace(Σ)/n`, floored at [`RIDGE_FLOOR`].
    pub fn with_default_ridge(matrix: DMatrix<f64>) -> Result<Self> {
        let ridge = default_ridge(&matrix);
        CovarianceModel::new(matrix, ridge)
    }

    pub fn raw(&self) -> &DMatrix<f64> {
        &self.raw
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn nodes(&self) -> usize {
        self.raw.nrows()
    }

    /// `Σ + ridge·I`, already factored.
    pub fn evaluate(&self) -> &SpdMatrix {
        &self.ridged
    }

    /// Same raw matrix restricted to its diagonal, same ridge.
    pub fn diagonal(&self) -> Result<Self> {
        CovarianceModel::new(DMatrix::from_diagonal(&self.raw.diagonal()), self.ridge)
    }
}

impl PartialEq for CovarianceModel {
    fn eq(&self, other: &Self) -> bool {
        self.raw == other.raw && self.ridge == other.ridge
    }
}

pub fn default_ridge(matrix: &DMatrix<f64>) -> f64 {
    let n = matrix.nrows().max(1) as f64;
    (DEFAULT_RIDGE_SCALE * matrix.trace() / n).max(RIDGE_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarketParams {
    drift: DriftParams,
    covariance: CovarianceModel,
}

impl MarketParams {
    pub fn new(drift: DriftParams, covariance: CovarianceModel) -> Result<Self> {
        if drift.nodes() != covariance.nodes() {
            return Err(Error::DimensionMismatch {
                what: "market params",
                expected: format!("covariance {0}x{0}", drift.nodes()),
                actual: format!("{0}x{0}", covariance.nodes()),
            });
        }
        Ok(MarketParams { drift, covariance })
    }

    pub fn drift(&self) -> &DriftParams {
        &self.drift
    }

    pub fn covariance(&self) -> &CovarianceModel {
        &self.covariance
    }

    pub fn nodes(&self) -> usize {
        self.drift.nodes()
    }

    pub fn variables(&self) -> usize {
        self.drift.variables()
    }

    /// `(b_t, Σ_t)` for one day's weather.
    pub fn evaluate(&self, weather: &MeteoMatrix) -> Result<(DVector<f64>, &SpdMatrix)> {
        Ok((self.drift.evaluate(weather)?, self.covariance.evaluate()))
    }
}

/// `log(da) − log(rt)`, rejecting prices at or below `floor`.
pub fn log_price_diff(da_price: f64, rt_price: f64, floor: f64) -> Result<f64> {
    for price in [da_price, rt_price] {
        if !(price > floor) || !price.is_finite() {
            return Err(Error::NonpositivePrice { price, floor });
        }
    }
    Ok(da_price.ln() - rt_price.ln())
}
