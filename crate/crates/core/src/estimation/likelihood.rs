//! Gaussian log-likelihood of the price differences and its analytic gradient.

use nalgebra::{DMatrix, DVector};

use super::params::{CovarianceLayout, CovarianceParams, ParamVector};
use super::Observation;
use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::market_model::DriftParams;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn check_shapes(phi: &ParamVector, obs: &[Observation]) -> Result<()> {
    let (n, k) = (phi.layout().nodes(), phi.layout().variables());
    for o in obs {
        if o.nodes() != n || o.variables() != k {
            return Err(Error::DimensionMismatch {
                what: "observation",
                expected: format!("{n} nodes x {k} variables"),
                actual: format!("{} nodes x {} variables", o.nodes(), o.variables()),
            });
        }
    }
    Ok(())
}

fn prepare(phi: &ParamVector, obs: &[Observation]) -> Result<(DriftParams, SpdMatrix)> {
    check_shapes(phi, obs)?;
    let parts = phi.unpack();
    let sigma = parts.covariance_matrix()?;
    Ok((parts.drift, sigma))
}

/// `H(φ) = Σ_t [ −(n/2) log 2π − ½ log det Σ − ½ rᵀ Σ⁻¹ r ]`, `r = f_t − b_t`.
pub fn log_likelihood(phi: &ParamVector, obs: &[Observation]) -> Result<f64> {
    let (drift, sigma) = prepare(phi, obs)?;
    let n = sigma.dim() as f64;
    let per_day = -0.5 * n * LN_2PI - 0.5 * sigma.ln_det();
    let mut total = 0.0;
    for o in obs {
        let r = o.prices.values() - drift.evaluate(&o.weather)?;
        total += per_day - 0.5 * sigma.inverse_quadratic_form(&r);
    }
    Ok(total)
}

/// `∂H/∂φ = Σ_t [ −½ tr(Σ⁻¹ ∂Σ) + (∂b)ᵀ Σ⁻¹ r + ½ rᵀ Σ⁻¹ ∂Σ Σ⁻¹ r ]`.
///
/// The covariance terms are skipped when the layout holds Σ fixed.
pub fn likelihood_gradient(phi: &ParamVector, obs: &[Observation]) -> Result<ParamVector> {
    let (drift, sigma) = prepare(phi, obs)?;
    let layout = phi.layout();
    let (n, k) = (layout.nodes(), layout.variables());
    let mut grad = DVector::<f64>::zeros(layout.len());

    // Drift: ∂b_i/∂c_{i,0} = 1, ∂b_i/∂c_{i,j+1} = θ_{i,j}.
    let mut scatter = DMatrix::<f64>::zeros(n, n);
    let track_scatter = !layout.is_drift_only();
    for o in obs {
        let r = o.prices.values() - drift.evaluate(&o.weather)?;
        let s = sigma.solve(&r);
        let theta = o.weather.values();
        for i in 0..n {
            grad[layout.drift_index(i, 0)] += s[i];
            for j in 0..k {
                grad[layout.drift_index(i, j + 1)] += s[i] * theta[(i, j)];
            }
        }
        if track_scatter {
            scatter += &r * r.transpose();
        }
    }

    if let CovarianceLayout::Cholesky = layout.covariance() {
        let days = obs.len() as f64;
        let inv = sigma.inverse();
        let factor = cholesky_factor(phi);
        // Σ_t rᵀ A dΣ A r = tr(A dΣ A R) with R the residual scatter.
        let a_r_a = &inv * &scatter * &inv;
        for row in 0..n {
            for col in 0..=row {
                let mut d_l = DMatrix::<f64>::zeros(n, n);
                d_l[(row, col)] = if row == col { factor[(row, row)] } else { 1.0 };
                let d_sigma = &d_l * factor.transpose() + &factor * d_l.transpose();
                let trace_term = trace_of_product(&inv, &d_sigma);
                let quad_term = trace_of_product(&a_r_a, &d_sigma);
                grad[layout.cholesky_index(row, col)] = -0.5 * days * trace_term + 0.5 * quad_term;
            }
        }
    }

    phi.with_values(grad)
}

fn cholesky_factor(phi: &ParamVector) -> DMatrix<f64> {
    match phi.unpack().covariance {
        CovarianceParams::Cholesky(c) => c.factor(),
        CovarianceParams::Fixed(_) => unreachable!("fixed layout has no factor"),
    }
}

/// `tr(A B)` for square matrices.
fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut t = 0.0;
    for i in 0..n {
        for j in 0..n {
            t += a[(i, j)] * b[(j, i)];
        }
    }
    t
}

/// Result of comparing the analytic gradient with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
}

/// Absolute gap below which a component counts as agreeing.
pub const GRADIENT_CHECK_ABS_FLOOR: f64 = 1e-9;

/// Componentwise `|a − d| / max(|a|, |d|)`, zero when `|a − d| ≤ 1e-9`.
pub fn relative_gradient_error(analytic: f64, numeric: f64) -> f64 {
    let gap = (analytic - numeric).abs();
    if gap <= GRADIENT_CHECK_ABS_FLOOR {
        0.0
    } else if !gap.is_finite() {
        f64::INFINITY
    } else {
        gap / analytic.abs().max(numeric.abs())
    }
}

/// Central differences with step `1e-5 · max(1, |φ_j|)` against `gradient`.
pub fn check_gradient_with<G>(
    phi: &ParamVector,
    obs: &[Observation],
    gradient: G,
) -> Result<GradientCheck>
where
    G: Fn(&ParamVector, &[Observation]) -> Result<ParamVector>,
{
    let analytic = gradient(phi, obs)?;
    let mut numeric = Vec::with_capacity(phi.len());
    for j in 0..phi.len() {
        let h = 1e-5 * phi.values()[j].abs().max(1.0);
        let mut up = phi.values().clone();
        up[j] += h;
        let mut down = phi.values().clone();
        down[j] -= h;
        let f_up = log_likelihood(&phi.with_values(up)?, obs)?;
        let f_down = log_likelihood(&phi.with_values(down)?, obs)?;
        numeric.push((f_up - f_down) / (2.0 * h));
    }
    let analytic: Vec<f64> = analytic.values().iter().copied().collect();
    let relative_errors: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, d)| relative_gradient_error(*a, *d))
        .collect();
    let max_relative_error = relative_errors.iter().fold(0.0_f64, |m, e| m.max(*e));
    Ok(GradientCheck {
        analytic,
        numeric,
        relative_errors,
        max_relative_error,
    })
}

pub fn check_gradient(phi: &ParamVector, obs: &[Observation]) -> Result<GradientCheck> {
    check_gradient_with(phi, obs, likelihood_gradient)
}
