//! Entropy-regularized mean-variance allocation.
//!
//! With `ρ = bᵀΣ⁻¹b` and the Lagrange multiplier
//! `w = (z e^{ρT} − X₀)/(e^{ρT} − 1)`, the optimal exploratory policy at
//! wealth `X_t` is
//!
//! ```text
//! π(·|X_t) = N( −Σ⁻¹b (X_t − w),  (γ/2) Σ⁻¹ e^{ρ(T−t)} )
//! ```
//!
//! Positive allocation at node `i` profits when the day-ahead log price
//! exceeds the real-time one, so a day's wealth change is `qᵀf`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;

/// Default floor on `ρ` below which the drift carries no usable signal.
pub const DEFAULT_RHO_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    /// Expected terminal wealth `z`.
    pub target_wealth: f64,
    /// Exploration temperature `γ`.
    pub gamma: f64,
    /// `X₀`.
    pub initial_wealth: f64,
    /// `T`, in trading steps.
    pub horizon: f64,
    #[serde(default = "default_rho_floor")]
    pub rho_floor: f64,
}

fn default_rho_floor() -> f64 {
    DEFAULT_RHO_FLOOR
}

impl ObjectiveConfig {
    /// `z = 105`, `γ = 0.001`, `X₀ = 100` over the given horizon.
    pub fn with_horizon(horizon: f64) -> Self {
        ObjectiveConfig {
            target_wealth: 105.0,
            gamma: 0.001,
            initial_wealth: 100.0,
            horizon,
            rho_floor: DEFAULT_RHO_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !self.target_wealth.is_finite() || !self.initial_wealth.is_finite() {
            return Err(Error::InvalidConfig(
                "target and initial wealth must be finite".into(),
            ));
        }
        if !(self.rho_floor >= 0.0) {
            return Err(Error::InvalidConfig("rho_floor must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GaussianPolicy {
    mean: DVector<f64>,
    covariance: SpdMatrix,
}

impl GaussianPolicy {
    pub fn new(mean: DVector<f64>, covariance: SpdMatrix) -> Result<Self> {
        if mean.len() != covariance.dim() {
            return Err(Error::DimensionMismatch {
                what: "policy",
                expected: format!("mean of length {}", covariance.dim()),
                actual: mean.len().to_string(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("policy mean is not finite".into()));
        }
        Ok(GaussianPolicy { mean, covariance })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &SpdMatrix {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Dollars per node.
#[derive(Clone, Debug, PartialEq)]
pub struct Allocation(pub DVector<f64>);

impl Allocation {
    pub fn flat(nodes: usize) -> Self {
        Allocation(DVector::zeros(nodes))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    /// Clamp every component into `[-cap, cap]`.
    pub fn capped(mut self, cap: f64) -> Self {
        self.0.iter_mut().for_each(|v| *v = v.clamp(-cap, cap));
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WealthState {
    pub wealth: f64,
    /// Elapsed trading steps.
    pub elapsed: f64,
}

/// Minimizer over densities of `∫(aᵀq + ½qᵀAq)π + γ∫π log π`: `N(−A⁻¹a, γA⁻¹)`.
pub fn gaussian_quadratic_minimizer(
    a: &DVector<f64>,
    curvature: &SpdMatrix,
    gamma: f64,
) -> Result<GaussianPolicy> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    if a.len() != curvature.dim() {
        return Err(Error::DimensionMismatch {
            what: "linear term",
            expected: curvature.dim().to_string(),
            actual: a.len().to_string(),
        });
    }
    let mean = -curvature.solve(a);
    let covariance = SpdMatrix::new(curvature.inverse() * gamma)?;
    GaussianPolicy::new(mean, covariance)
}

/// `ρ = bᵀ Σ⁻¹ b`.
pub fn signal_strength(drift: &DVector<f64>, sigma: &SpdMatrix) -> Result<f64> {
    if drift.len() != sigma.dim() {
        return Err(Error::DimensionMismatch {
            what: "drift",
            expected: sigma.dim().to_string(),
            actual: drift.len().to_string(),
        });
    }
    Ok(sigma.inverse_quadratic_form(drift))
}

/// `w = (z e^{ρT} − X₀)/(e^{ρT} − 1)`, evaluated as `z + (z − X₀)/expm1(ρT)`.
pub fn lagrange_multiplier(
    drift: &DVector<f64>,
    sigma: &SpdMatrix,
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    let rho = signal_strength(drift, sigma)?;
    multiplier_from_rho(rho, cfg)
}

fn multiplier_from_rho(rho: f64, cfg: &ObjectiveConfig) -> Result<f64> {
    if !(rho > cfg.rho_floor) {
        return Err(Error::DegenerateDrift {
            rho,
            floor: cfg.rho_floor,
        });
    }
    let growth = (rho * cfg.horizon).exp_m1();
    Ok(cfg.target_wealth + (cfg.target_wealth - cfg.initial_wealth) / growth)
}

/// Per-day closed form, reusable across wealth levels and paths.
#[derive(Clone, Debug)]
pub struct ClosedFormPolicy {
    /// `−Σ⁻¹b`; the policy mean is `slope · (X − w)`.
    slope: DVector<f64>,
    precision: SpdMatrix,
    precision_factor: DMatrix<f64>,
    rho: f64,
    multiplier: f64,
    gamma: f64,
    horizon: f64,
}

impl ClosedFormPolicy {
    pub fn new(drift: &DVector<f64>, sigma: &SpdMatrix, cfg: &ObjectiveConfig) -> Result<Self> {
        cfg.validate()?;
        let rho = signal_strength(drift, sigma)?;
        let multiplier = multiplier_from_rho(rho, cfg)?;
        let precision = SpdMatrix::new(sigma.inverse())?;
        Ok(ClosedFormPolicy {
            slope: -sigma.solve(drift),
            precision_factor: precision.factor(),
            precision,
            rho,
            multiplier,
            gamma: cfg.gamma,
            horizon: cfg.horizon,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }

    pub fn slope(&self) -> &DVector<f64> {
        &self.slope
    }

    pub fn mean_at(&self, wealth: f64) -> DVector<f64> {
        &self.slope * (wealth - self.multiplier)
    }

    /// `(γ/2) Σ⁻¹ e^{ρ(T−t)}`.
    pub fn covariance_at(&self, elapsed: f64) -> Result<SpdMatrix> {
        SpdMatrix::new(self.precision.matrix() * self.variance_scale(elapsed)?)
    }

    pub fn at(&self, state: WealthState) -> Result<GaussianPolicy> {
        GaussianPolicy::new(
            self.mean_at(state.wealth),
            self.covariance_at(state.elapsed)?,
        )
    }

    /// Variance scale `(γ/2) e^{ρ(T−t)}` multiplying `Σ⁻¹`.
    pub fn variance_scale(&self, elapsed: f64) -> Result<f64> {
        if !(0.0..=self.horizon).contains(&elapsed) {
            return Err(Error::InvalidInput(format!(
                "elapsed time {elapsed} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(self.gamma / 2.0 * (self.rho * (self.horizon - elapsed)).exp())
    }

    pub fn precision(&self) -> &SpdMatrix {
        &self.precision
    }

    /// Draws from the policy at `state` without refactoring the covariance.
    ///
    /// Consumes the same normals as [`sample_allocation`] on [`Self::at`].
    pub fn sample<R: Rng + ?Sized>(&self, state: WealthState, rng: &mut R) -> Result<Allocation> {
        let scale = self.variance_scale(state.elapsed)?.sqrt();
        let xi = standard_normals(self.slope.len(), rng);
        Ok(Allocation(
            self.mean_at(state.wealth) + &self.precision_factor * xi * scale,
        ))
    }
}

/// The closed-form exploratory policy at `state`.
pub fn optimal_policy(
    drift: &DVector<f64>,
    sigma: &SpdMatrix,
    state: WealthState,
    cfg: &ObjectiveConfig,
) -> Result<GaussianPolicy> {
    ClosedFormPolicy::new(drift, sigma, cfg)?.at(state)
}

/// `mean + L ξ` with `ξ` i.i.d. standard normal drawn from `rng`.
pub fn sample_allocation<R: Rng + ?Sized>(policy: &GaussianPolicy, rng: &mut R) -> Allocation {
    let xi = standard_normals(policy.dim(), rng);
    Allocation(policy.mean() + policy.covariance().factor() * xi)
}

pub(crate) fn standard_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WealthMoments {
    /// `E[dX] = bᵀ m dt`.
    pub mean_increment: f64,
    /// `E[(dX)²] = (mᵀΣm + tr(Σ C)) dt`.
    pub second_moment_increment: f64,
}

pub fn wealth_moments(
    policy: &GaussianPolicy,
    drift: &DVector<f64>,
    sigma: &SpdMatrix,
    dt: f64,
) -> Result<WealthMoments> {
    let n = policy.dim();
    if drift.len() != n || sigma.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "wealth moments",
            expected: n.to_string(),
            actual: format!("drift {}, covariance {}", drift.len(), sigma.dim()),
        });
    }
    let m = policy.mean();
    let s = sigma.matrix();
    let trace = (s * policy.covariance().matrix()).trace();
    Ok(WealthMoments {
        mean_increment: drift.dot(m) * dt,
        second_moment_increment: ((m.transpose() * s * m)[(0, 0)] + trace) * dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> SpdMatrix {
        SpdMatrix::new(DMatrix::from_element(1, 1, v)).unwrap()
    }

    fn cfg1() -> ObjectiveConfig {
        ObjectiveConfig::with_horizon(1.0)
    }

    #[test]
    fn minimizer_symmetric_case() {
        let p =
            gaussian_quadratic_minimizer(&DVector::zeros(2), &SpdMatrix::identity(2), 1.0).unwrap();
        assert_eq!(p.mean(), &DVector::zeros(2));
        assert_eq!(p.covariance().matrix(), &DMatrix::identity(2, 2));
    }

    /// Minimizes `Σ p_i c(q_i) + γ Σ p_i ln(p_i/Δ)` over lattice densities by
    /// exponentiated-gradient steps on the simplex.
    fn lattice_variational_moments(a: f64, curv: f64, gamma: f64) -> (f64, f64) {
        let step = 1e-3;
        let q: Vec<f64> = (0..=12_000).map(|i| -6.0 + i as f64 * step).collect();
        let cost: Vec<f64> = q.iter().map(|x| a * x + 0.5 * curv * x * x).collect();
        let mut p = vec![1.0 / (q.len() as f64 * step); q.len()];
        let eta = 0.5 / gamma;
        for _ in 0..200 {
            let logits: Vec<f64> = p
                .iter()
                .zip(&cost)
                .map(|(pi, c)| pi.ln() - eta * (c + gamma * (pi.ln() + 1.0)))
                .collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - top).exp()).sum::<f64>() * step;
            p = logits.iter().map(|l| (l - top).exp() / z).collect();
        }
        let mean: f64 = p.iter().zip(&q).map(|(pi, x)| pi * x * step).sum();
        let var: f64 = p
            .iter()
            .zip(&q)
            .map(|(pi, x)| pi * (x - mean).powi(2) * step)
            .sum();
        (mean, var)
    }

    #[test]
    fn minimizer_matches_lattice_variational_optimum() {
        let (m, v) = lattice_variational_moments(1.0, 2.0, 0.5);
        assert!((m + 0.5).abs() < 1e-3 && (v - 0.25).abs() < 1e-3, "{m} {v}");
        let p = gaussian_quadratic_minimizer(&DVector::from_element(1, 1.0), &scalar(2.0), 0.5)
            .unwrap();
        assert!((p.mean()[0] + 0.5).abs() < 1e-15);
        assert!((p.covariance().matrix()[(0, 0)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn minimizer_scales_with_gamma() {
        let a = DVector::from_vec(vec![0.3, -0.1]);
        let curv = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let p1 = gaussian_quadratic_minimizer(&a, &curv, 0.7).unwrap();
        let p2 = gaussian_quadratic_minimizer(&a, &curv, 1.4).unwrap();
        assert_eq!(p1.mean(), p2.mean());
        assert_eq!(p1.covariance().matrix() * 2.0, *p2.covariance().matrix());
    }

    #[test]
    fn multiplier_one_node_example() {
        let w =
            lagrange_multiplier(&DVector::from_element(1, 0.1), &scalar(0.04), &cfg1()).unwrap();
        // ρ = 0.01/0.04 = 0.25, high-precision evaluation of (105e^{0.25}−100)/(e^{0.25}−1)
        let expected = 122.604_058_320_938_99;
        assert!((w - expected).abs() < 1e-9, "{w}");
        assert!(w > 105.0);
    }

    #[test]
    fn multiplier_identity_when_target_is_initial_wealth() {
        let cfg = ObjectiveConfig {
            target_wealth: 100.0,
            ..cfg1()
        };
        let w = lagrange_multiplier(&DVector::from_element(1, 0.1), &scalar(0.04), &cfg).unwrap();
        assert_eq!(w, 100.0);
    }

    #[test]
    fn zero_drift_is_degenerate() {
        assert!(matches!(
            lagrange_multiplier(&DVector::zeros(2), &SpdMatrix::identity(2), &cfg1()),
            Err(Error::DegenerateDrift { .. })
        ));
    }

    #[test]
    fn policy_one_node_example() {
        let b = DVector::from_element(1, 0.1);
        let sigma = scalar(0.04);
        let p = optimal_policy(
            &b,
            &sigma,
            WealthState {
                wealth: 100.0,
                elapsed: 0.0,
            },
            &cfg1(),
        )
        .unwrap();
        let w = 122.604_058_320_938_99;
        assert!((p.mean()[0] + 2.5 * (100.0 - w)).abs() < 1e-9);
        let var = 0.0005 * 25.0 * 0.25_f64.exp();
        assert!((p.covariance().matrix()[(0, 0)] - var).abs() < 1e-15);
    }

    #[test]
    fn policy_at_multiplier_and_terminal_time() {
        let b = DVector::from_vec(vec![0.05, -0.02]);
        let sigma =
            SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.03])).unwrap();
        let cfg = ObjectiveConfig::with_horizon(10.0);
        let cf = ClosedFormPolicy::new(&b, &sigma, &cfg).unwrap();
        let at_w = cf
            .at(WealthState {
                wealth: cf.multiplier(),
                elapsed: 3.0,
            })
            .unwrap();
        assert_eq!(at_w.mean(), &DVector::zeros(2));
        let end = cf.covariance_at(10.0).unwrap();
        assert_eq!(end.matrix(), &(sigma.inverse() * (0.001 / 2.0)));
        // shrinks toward T
        let early = cf.covariance_at(0.0).unwrap();
        assert!(early.matrix()[(0, 0)] > cf.covariance_at(5.0).unwrap().matrix()[(0, 0)]);
        assert!(cf.covariance_at(10.5).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_degenerate_limit_is_mean() {
        let mean = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        let tiny = SpdMatrix::new(DMatrix::identity(3, 3) * 1e-30).unwrap();
        let p = GaussianPolicy::new(mean.clone(), tiny).unwrap();
        let q = sample_allocation(&p, &mut ChaCha8Rng::seed_from_u64(1));
        assert!((q.values() - &mean).amax() < 1e-10);

        let p = GaussianPolicy::new(mean, SpdMatrix::identity(3)).unwrap();
        let a = sample_allocation(&p, &mut ChaCha8Rng::seed_from_u64(42));
        let b = sample_allocation(&p, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    #[test]
    fn wealth_moment_limits() {
        let sigma =
            SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.03])).unwrap();
        let cov = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let p = GaussianPolicy::new(DVector::zeros(2), cov.clone()).unwrap();
        let m = wealth_moments(&p, &DVector::from_vec(vec![0.1, 0.2]), &sigma, 0.5).unwrap();
        assert_eq!(m.mean_increment, 0.0);
        assert!(
            (m.second_moment_increment - (sigma.matrix() * cov.matrix()).trace() * 0.5).abs()
                < 1e-15
        );

        let p = GaussianPolicy::new(DVector::from_element(1, 10.0), scalar(1e-300)).unwrap();
        let m = wealth_moments(&p, &DVector::from_element(1, 0.05), &scalar(0.04), 1.0).unwrap();
        assert!((m.mean_increment - 0.5).abs() < 1e-15);
        assert!((m.second_moment_increment - 4.0).abs() < 1e-12);
    }
}
