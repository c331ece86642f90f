use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::market_model::{CovarianceModel, DriftParams, MarketParams};

/// How the covariance enters the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub enum CovarianceLayout {
    /// Held constant; only the drift is optimized.
    Fixed(CovarianceModel),
    /// `Σ = L Lᵀ`, `L` lower triangular with log-diagonal, packed row by row.
    Cholesky,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    nodes: usize,
    variables: usize,
    covariance: CovarianceLayout,
}

impl ParamLayout {
    pub fn new(nodes: usize, variables: usize, covariance: CovarianceLayout) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::InvalidInput("layout needs at least one node".into()));
        }
        if let CovarianceLayout::Fixed(cov) = &covariance {
            if cov.nodes() != nodes {
                return Err(Error::DimensionMismatch {
                    what: "fixed covariance",
                    expected: format!("{nodes}x{nodes}"),
                    actual: format!("{0}x{0}", cov.nodes()),
                });
            }
        }
        Ok(ParamLayout {
            nodes,
            variables,
            covariance,
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn variables(&self) -> usize {
        self.variables
    }

    pub fn covariance(&self) -> &CovarianceLayout {
        &self.covariance
    }

    pub fn is_drift_only(&self) -> bool {
        matches!(self.covariance, CovarianceLayout::Fixed(_))
    }

    pub fn drift_len(&self) -> usize {
        self.nodes * (self.variables + 1)
    }

    pub fn cholesky_len(&self) -> usize {
        match self.covariance {
            CovarianceLayout::Fixed(_) => 0,
            CovarianceLayout::Cholesky => self.nodes * (self.nodes + 1) / 2,
        }
    }

    pub fn len(&self) -> usize {
        self.drift_len() + self.cholesky_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn drift_index(&self, node: usize, column: usize) -> usize {
        node * (self.variables + 1) + column
    }

    /// Slot of `L[row, col]` (`col <= row`); the diagonal slot holds `ln L[row,row]`.
    pub fn cholesky_index(&self, row: usize, col: usize) -> usize {
        debug_assert!(col <= row);
        self.drift_len() + row * (row + 1) / 2 + col
    }
}

/// Packed lower-triangular Cholesky parameters with log-diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct CholeskyParams {
    nodes: usize,
    packed: Vec<f64>,
}

impl CholeskyParams {
    pub fn from_packed(nodes: usize, packed: Vec<f64>) -> Result<Self> {
        if packed.len() != nodes * (nodes + 1) / 2 {
            return Err(Error::DimensionMismatch {
                what: "cholesky parameters",
                expected: (nodes * (nodes + 1) / 2).to_string(),
                actual: packed.len().to_string(),
            });
        }
        Ok(CholeskyParams { nodes, packed })
    }

    pub fn from_covariance(sigma: &SpdMatrix) -> Self {
        let l = sigma.factor();
        let n = sigma.dim();
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..i {
                packed.push(l[(i, j)]);
            }
            packed.push(l[(i, i)].ln());
        }
        CholeskyParams { nodes: n, packed }
    }

    pub fn packed(&self) -> &[f64] {
        &self.packed
    }

    pub fn factor(&self) -> DMatrix<f64> {
        let n = self.nodes;
        let mut l = DMatrix::zeros(n, n);
        let mut it = self.packed.iter();
        for i in 0..n {
            for j in 0..i {
                l[(i, j)] = *it.next().unwrap();
            }
            l[(i, i)] = it.next().unwrap().exp();
        }
        l
    }

    pub fn covariance(&self) -> Result<SpdMatrix> {
        let l = self.factor();
        SpdMatrix::new(&l * l.transpose())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CovarianceParams {
    Fixed(CovarianceModel),
    Cholesky(CholeskyParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnpackedParams {
    pub drift: DriftParams,
    pub covariance: CovarianceParams,
}

impl UnpackedParams {
    pub fn covariance_matrix(&self) -> Result<SpdMatrix> {
        match &self.covariance {
            CovarianceParams::Fixed(c) => Ok(c.evaluate().clone()),
            CovarianceParams::Cholesky(c) => c.covariance(),
        }
    }

    pub fn to_market_params(&self) -> Result<MarketParams> {
        let cov = match &self.covariance {
            CovarianceParams::Fixed(c) => c.clone(),
            CovarianceParams::Cholesky(c) => {
                CovarianceModel::new(c.covariance()?.into_matrix(), 0.0)?
            }
        };
        MarketParams::new(self.drift.clone(), cov)
    }
}

/// Flat parameter vector `φ` plus the layout describing its slices.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    layout: ParamLayout,
    values: DVector<f64>,
}

impl ParamVector {
    pub fn from_values(layout: ParamLayout, values: DVector<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: layout.len().to_string(),
                actual: values.len().to_string(),
            });
        }
        Ok(ParamVector { layout, values })
    }

    pub fn drift_only(drift: &DriftParams, covariance: CovarianceModel) -> Result<Self> {
        ParamVector::pack(&UnpackedParams {
            drift: drift.clone(),
            covariance: CovarianceParams::Fixed(covariance),
        })
    }

    pub fn with_cholesky(drift: &DriftParams, sigma: &SpdMatrix) -> Result<Self> {
        ParamVector::pack(&UnpackedParams {
            drift: drift.clone(),
            covariance: CovarianceParams::Cholesky(CholeskyParams::from_covariance(sigma)),
        })
    }

    pub fn pack(parts: &UnpackedParams) -> Result<Self> {
        let (n, k) = (parts.drift.nodes(), parts.drift.variables());
        let (covariance, tail): (CovarianceLayout, &[f64]) = match &parts.covariance {
            CovarianceParams::Fixed(c) => (CovarianceLayout::Fixed(c.clone()), &[]),
            CovarianceParams::Cholesky(c) => {
                if c.nodes != n {
                    return Err(Error::DimensionMismatch {
                        what: "cholesky parameters",
                        expected: n.to_string(),
                        actual: c.nodes.to_string(),
                    });
                }
                (CovarianceLayout::Cholesky, c.packed())
            }
        };
        let layout = ParamLayout::new(n, k, covariance)?;
        let coeffs = parts.drift.coefficients();
        let mut values = Vec::with_capacity(layout.len());
        for i in 0..n {
            values.extend(coeffs.row(i).iter());
        }
        values.extend_from_slice(tail);
        ParamVector::from_values(layout, DVector::from_vec(values))
    }

    pub fn unpack(&self) -> UnpackedParams {
        let (n, k) = (self.layout.nodes, self.layout.variables);
        let coeffs = DMatrix::from_fn(n, k + 1, |i, j| self.values[self.layout.drift_index(i, j)]);
        // unchecked: a diverging iterate may hold non-finite entries
        let drift = DriftParams::from_unchecked(coeffs);
        let covariance = match &self.layout.covariance {
            CovarianceLayout::Fixed(c) => CovarianceParams::Fixed(c.clone()),
            CovarianceLayout::Cholesky => CovarianceParams::Cholesky(CholeskyParams {
                nodes: n,
                packed: self.values.as_slice()[self.layout.drift_len()..].to_vec(),
            }),
        };
        UnpackedParams { drift, covariance }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
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

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self + step · direction`, same layout.
    pub fn step(&self, direction: &ParamVector, step: f64) -> ParamVector {
        ParamVector {
            layout: self.layout.clone(),
            values: &self.values + &direction.values * step,
        }
    }

    pub fn with_values(&self, values: DVector<f64>) -> Result<ParamVector> {
        ParamVector::from_values(self.layout.clone(), values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn pack_unpack_round_trips(
            n in 1usize..4,
            k in 0usize..4,
            seed in proptest::collection::vec(-3.0f64..3.0, 64),
            cholesky in any::<bool>(),
        ) {
            let layout = if cholesky {
                ParamLayout::new(n, k, CovarianceLayout::Cholesky).unwrap()
            } else {
                let cov = CovarianceModel::new(DMatrix::identity(n, n), 0.0).unwrap();
                ParamLayout::new(n, k, CovarianceLayout::Fixed(cov)).unwrap()
            };
            let phi = ParamVector::from_values(
                layout.clone(),
                DVector::from_fn(layout.len(), |i, _| seed[i % seed.len()] * (1.0 + i as f64)),
            ).unwrap();
            let back = ParamVector::pack(&phi.unpack()).unwrap();
            prop_assert_eq!(back, phi);
        }
    }

    #[test]
    fn cholesky_index_matches_packing() {
        let layout = ParamLayout::new(3, 1, CovarianceLayout::Cholesky).unwrap();
        assert_eq!(layout.len(), 6 + 6);
        assert_eq!(layout.cholesky_index(0, 0), 6);
        assert_eq!(layout.cholesky_index(1, 0), 7);
        assert_eq!(layout.cholesky_index(1, 1), 8);
        assert_eq!(layout.cholesky_index(2, 2), 11);
    }

    #[test]
    fn cholesky_params_reproduce_covariance() {
        let s = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.09])).unwrap();
        let c = CholeskyParams::from_covariance(&s).covariance().unwrap();
        assert!((c.matrix() - s.matrix()).norm() < 1e-16);
    }
}
