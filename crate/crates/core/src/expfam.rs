//! Exponential families in natural and expectation coordinates.
//!
//! A family is determined by its sufficient statistic `phi(x)` and log
//! partition function `G(theta)`; densities have the form
//! `P(x | theta) = h(x) exp(theta . phi(x) - G(theta))`.  The gradient
//! `g = grad G` maps natural parameters `theta` to expectation parameters
//! `mu = E[phi(x)]` and is invertible on the interior of the domain; `link`
//! and `inverse_link` implement the two directions.  The Bregman divergence
//! of `G`,
//!
//! ```text
//! D(theta~, theta) = G(theta~) - G(theta) - g(theta) . (theta~ - theta),
//! ```
//!
//! equals the relative entropy from `P(. | theta)` to `P(. | theta~)` and is
//! the building block for every divergence in this crate.
//!
//! Two concrete families are provided:
//!
//! * **Gaussian** on `R^d`: `phi(x) = (x, x x^T)` flattened row-major, so the
//!   expectation parameters are `(mean, second-moment matrix)` and weighted
//!   averaging of sufficient statistics is literal vector averaging.  The
//!   covariance is recovered as `Sigma = M2 - m m^T`.
//! * **Poisson** on counts: `phi(x) = x`, `G(theta) = exp(theta)`, base
//!   measure `1/x!`.
//!
//! Matrix-valued blocks inside the flat parameter vectors are interpreted
//! through their symmetric part, which keeps per-coordinate finite
//! differencing of `G` meaningful in tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson as PoissonDistribution, StandardNormal};

use crate::error::{EmError, Result};
use crate::linalg::{self, spd_cholesky};
use crate::numeric::ln_gamma;

const LN_TWO_PI: f64 = 1.837_877_066_409_345_4;

/// Eigenvalue floor applied to recovered covariances after parameter
/// updates; small batches can otherwise leave second moments singular.
pub const COVARIANCE_EIGENVALUE_FLOOR: f64 = 1e-8;

/// Natural parameters `theta` of an exponential family, stored as one flat
/// vector of length [`ExpFamSpec::dim_stat`].  The newtype keeps natural and
/// expectation coordinates from being mixed up at compile time.
#[derive(Clone, Debug, PartialEq)]
pub struct NaturalParams(pub DVector<f64>);

/// Expectation parameters `mu = E[phi(x)]`, same layout as the sufficient
/// statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectationParams(pub DVector<f64>);

/// A concrete exponential family.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExpFamSpec {
    /// Multivariate Gaussian with unknown mean and covariance.  Parameter
    /// layout: `d` mean/linear coordinates followed by the `d*d` row-major
    /// matrix block (`x x^T` for statistics, `M2` for expectations, the
    /// precision-like block `Theta2 = -Sigma^{-1}/2` for naturals).
    Gaussian { dim: usize },
    /// Poisson with natural parameter `theta = ln(rate)`.
    Poisson,
}

impl ExpFamSpec {
    /// Gaussian family on `R^dim`.
    pub fn gaussian(dim: usize) -> Result<Self> {
        if dim < 1 {
            return Err(EmError::invalid_argument(
                "gaussian spec: dimension must be at least 1",
            ));
        }
        Ok(ExpFamSpec::Gaussian { dim })
    }

    /// Poisson family on counts.
    pub fn poisson() -> Self {
        ExpFamSpec::Poisson
    }

    /// Dimension of one observation.
    pub fn obs_dim(&self) -> usize {
        match self {
            ExpFamSpec::Gaussian { dim } => *dim,
            ExpFamSpec::Poisson => 1,
        }
    }

    /// Length of the sufficient-statistic (and parameter) vectors.
    pub fn dim_stat(&self) -> usize {
        match self {
            ExpFamSpec::Gaussian { dim } => dim + dim * dim,
            ExpFamSpec::Poisson => 1,
        }
    }

    /// Sufficient statistic `phi(x)` of one observation.
    pub fn suff_stat(&self, obs: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_observation(obs)?;
        match self {
            ExpFamSpec::Gaussian { dim } => {
                let d = *dim;
                let mut out = DVector::zeros(self.dim_stat());
                out.rows_mut(0, d).copy_from(obs);
                for i in 0..d {
                    for j in 0..d {
                        out[d + i * d + j] = obs[i] * obs[j];
                    }
                }
                Ok(out)
            }
            ExpFamSpec::Poisson => Ok(obs.clone()),
        }
    }

    /// Log of the base measure `h(x)`: zero for the Gaussian (the
    /// normalization constant lives in `G`), `-ln(x!)` for the Poisson.
    pub fn log_base_measure(&self, obs: &DVector<f64>) -> Result<f64> {
        self.check_observation(obs)?;
        match self {
            ExpFamSpec::Gaussian { .. } => Ok(0.0),
            ExpFamSpec::Poisson => Ok(-ln_gamma(obs[0] + 1.0)),
        }
    }

    fn check_observation(&self, obs: &DVector<f64>) -> Result<()> {
        if obs.len() != self.obs_dim() {
            return Err(EmError::invalid_argument(format!(
                "observation has dimension {}, spec expects {}",
                obs.len(),
                self.obs_dim()
            )));
        }
        if let Some(i) = obs.iter().position(|x| !x.is_finite()) {
            return Err(EmError::invalid_argument(format!(
                "observation coordinate {i} is not finite"
            )));
        }
        if matches!(self, ExpFamSpec::Poisson) && obs[0] < 0.0 {
            return Err(EmError::invalid_argument(
                "poisson observation must be nonnegative",
            ));
        }
        Ok(())
    }

    /// Validates that `theta` lies in the natural domain.
    pub fn check_natural(&self, theta: &NaturalParams) -> Result<()> {
        self.check_len_and_finite(&theta.0, "natural parameter")?;
        if let ExpFamSpec::Gaussian { dim } = self {
            // Domain: Theta2 (symmetric part) negative definite.
            let (_, b) = gaussian_natural_parts(&theta.0, *dim);
            spd_cholesky(&b, "natural parameter precision block -2*Theta2").map(|_| ())
        } else {
            Ok(())
        }
    }

    /// Validates that `mu` lies in the image of the link map.
    pub fn check_expectation(&self, mu: &ExpectationParams) -> Result<()> {
        self.check_len_and_finite(&mu.0, "expectation parameter")?;
        match self {
            ExpFamSpec::Gaussian { dim } => {
                let (m, m2) = gaussian_expectation_parts(&mu.0, *dim);
                let sigma = m2 - &m * m.transpose();
                spd_cholesky(&sigma, "expectation parameter covariance M2 - m*m^T").map(|_| ())
            }
            ExpFamSpec::Poisson => {
                if mu.0[0] <= 0.0 {
                    Err(EmError::invalid_parameter(format!(
                        "poisson expectation parameter coordinate 0 must be positive, got {}",
                        mu.0[0]
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    fn check_len_and_finite(&self, values: &DVector<f64>, what: &str) -> Result<()> {
        if values.len() != self.dim_stat() {
            return Err(EmError::invalid_argument(format!(
                "{what} has length {}, spec expects {}",
                values.len(),
                self.dim_stat()
            )));
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(EmError::invalid_parameter(format!(
                "{what} coordinate {i} is not finite"
            )));
        }
        Ok(())
    }

    /// Log partition function `G(theta)`.
    pub fn log_partition(&self, theta: &NaturalParams) -> Result<f64> {
        self.check_natural(theta)?;
        match self {
            ExpFamSpec::Gaussian { dim } => {
                let d = *dim;
                let (theta1, b) = gaussian_natural_parts(&theta.0, d);
                let chol = spd_cholesky(&b, "natural parameter precision block")?;
                let quad = theta1.dot(&chol.solve(&theta1));
                Ok(0.5 * quad - 0.5 * linalg::log_det(&chol) + 0.5 * d as f64 * LN_TWO_PI)
            }
            ExpFamSpec::Poisson => Ok(theta.0[0].exp()),
        }
    }

    /// Link map `g(theta) = grad G(theta) = E[phi(x)]`.
    pub fn link(&self, theta: &NaturalParams) -> Result<ExpectationParams> {
        self.check_natural(theta)?;
        match self {
            ExpFamSpec::Gaussian { dim } => {
                let d = *dim;
                let (theta1, b) = gaussian_natural_parts(&theta.0, d);
                let chol = spd_cholesky(&b, "natural parameter precision block")?;
                let mean = chol.solve(&theta1);
                let sigma = chol.inverse();
                let m2 = sigma + &mean * mean.transpose();
                Ok(ExpectationParams(join_gaussian(&mean, &m2)))
            }
            ExpFamSpec::Poisson => Ok(ExpectationParams(DVector::from_element(
                1,
                theta.0[0].exp(),
            ))),
        }
    }

    /// Inverse link `g^{-1}(mu)`.
    pub fn inverse_link(&self, mu: &ExpectationParams) -> Result<NaturalParams> {
        self.check_expectation(mu)?;
        match self {
            ExpFamSpec::Gaussian { dim } => {
                let d = *dim;
                let (mean, m2) = gaussian_expectation_parts(&mu.0, d);
                let sigma = m2 - &mean * mean.transpose();
                let chol = spd_cholesky(&sigma, "covariance M2 - m*m^T")?;
                let theta1 = chol.solve(&mean);
                let theta2 = chol.inverse() * -0.5;
                Ok(NaturalParams(join_gaussian(&theta1, &theta2)))
            }
            ExpFamSpec::Poisson => Ok(NaturalParams(DVector::from_element(1, mu.0[0].ln()))),
        }
    }

    /// Convex conjugate `G*(mu) = theta . mu - G(theta)` evaluated at the
    /// optimizing `theta = g^{-1}(mu)`.  Used by the duality identity
    /// `D_G(theta~, theta) = D_{G*}(mu, mu~)`.
    pub fn conjugate(&self, mu: &ExpectationParams) -> Result<f64> {
        let theta = self.inverse_link(mu)?;
        Ok(theta.0.dot(&mu.0) - self.log_partition(&theta)?)
    }

    /// Log-density of one observation.
    pub fn log_density(&self, theta: &NaturalParams, obs: &DVector<f64>) -> Result<f64> {
        let phi = self.suff_stat(obs)?;
        Ok(theta.0.dot(&phi) - self.log_partition(theta)? + self.log_base_measure(obs)?)
    }

    /// Draws one observation from `P(. | theta)`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        theta: &NaturalParams,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        self.check_natural(theta)?;
        match self {
            ExpFamSpec::Gaussian { dim } => {
                let d = *dim;
                let (theta1, b) = gaussian_natural_parts(&theta.0, d);
                let chol_b = spd_cholesky(&b, "natural parameter precision block")?;
                let mean = chol_b.solve(&theta1);
                let sigma = chol_b.inverse();
                let chol_sigma = spd_cholesky(&sigma, "sampling covariance")?;
                let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample(StandardNormal)));
                Ok(mean + chol_sigma.l() * z)
            }
            ExpFamSpec::Poisson => {
                let rate = theta.0[0].exp();
                let dist = PoissonDistribution::new(rate).map_err(|e| {
                    EmError::numerical("poisson sampler", format!("rate {rate}: {e}"))
                })?;
                Ok(DVector::from_element(1, dist.sample(rng)))
            }
        }
    }

    /// Applies the covariance eigenvalue floor to a Gaussian expectation
    /// parameter; identity for families without a covariance block.  Healthy
    /// inputs are returned bit-identical.
    pub fn floor_expectation(&self, mu: ExpectationParams) -> ExpectationParams {
        match self {
            ExpFamSpec::Gaussian { dim } => {
                let (mean, m2) = gaussian_expectation_parts(&mu.0, *dim);
                let sigma = m2 - &mean * mean.transpose();
                if linalg::min_symmetric_eigenvalue(&sigma) >= COVARIANCE_EIGENVALUE_FLOOR {
                    return mu;
                }
                let floored = linalg::floor_eigenvalues(&sigma, COVARIANCE_EIGENVALUE_FLOOR);
                let m2_new = floored + &mean * mean.transpose();
                ExpectationParams(join_gaussian(&mean, &m2_new))
            }
            ExpFamSpec::Poisson => mu,
        }
    }

    /// Splits a Gaussian expectation parameter into `(mean, covariance)`.
    pub fn gaussian_mean_cov(
        &self,
        mu: &ExpectationParams,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        match self {
            ExpFamSpec::Gaussian { dim } => {
                self.check_len_and_finite(&mu.0, "expectation parameter")?;
                let (mean, m2) = gaussian_expectation_parts(&mu.0, *dim);
                let cov = m2 - &mean * mean.transpose();
                Ok((mean, cov))
            }
            ExpFamSpec::Poisson => Err(EmError::invalid_argument(
                "gaussian_mean_cov called on a non-Gaussian spec",
            )),
        }
    }

    /// Builds a Gaussian expectation parameter from `(mean, covariance)`.
    pub fn gaussian_from_mean_cov(
        &self,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
    ) -> Result<ExpectationParams> {
        match self {
            ExpFamSpec::Gaussian { dim } => {
                let d = *dim;
                if mean.len() != d || cov.nrows() != d || cov.ncols() != d {
                    return Err(EmError::invalid_argument(format!(
                        "mean/covariance shapes ({}, {}x{}) do not match dimension {}",
                        mean.len(),
                        cov.nrows(),
                        cov.ncols(),
                        d
                    )));
                }
                let m2 = linalg::symmetrize(cov) + mean * mean.transpose();
                let mu = ExpectationParams(join_gaussian(mean, &m2));
                self.check_expectation(&mu)?;
                Ok(mu)
            }
            ExpFamSpec::Poisson => Err(EmError::invalid_argument(
                "gaussian_from_mean_cov called on a non-Gaussian spec",
            )),
        }
    }
}

/// `(theta1, B = -2 * sym(Theta2))` from the flat natural vector.
fn gaussian_natural_parts(values: &DVector<f64>, d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let theta1 = values.rows(0, d).clone_owned();
    let raw = DMatrix::from_row_slice(d, d, &values.as_slice()[d..]);
    let b = linalg::symmetrize(&raw) * -2.0;
    (theta1, b)
}

/// `(mean, sym(M2))` from the flat expectation vector.
fn gaussian_expectation_parts(values: &DVector<f64>, d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let mean = values.rows(0, d).clone_owned();
    let raw = DMatrix::from_row_slice(d, d, &values.as_slice()[d..]);
    (mean, linalg::symmetrize(&raw))
}

/// Flattens `(vector, matrix)` into the shared row-major layout.
fn join_gaussian(vec_part: &DVector<f64>, mat_part: &DMatrix<f64>) -> DVector<f64> {
    let d = vec_part.len();
    let mut out = DVector::zeros(d + d * d);
    out.rows_mut(0, d).copy_from(vec_part);
    for i in 0..d {
        for j in 0..d {
            out[d + i * d + j] = mat_part[(i, j)];
        }
    }
    out
}

/// Bregman divergence of the log partition function,
/// `G(theta~) - G(theta) - g(theta) . (theta~ - theta)`; equals the relative
/// entropy from `P(.|theta)` to `P(.|theta~)`.
pub fn bregman_divergence(
    spec: &ExpFamSpec,
    theta_tilde: &NaturalParams,
    theta: &NaturalParams,
) -> Result<f64> {
    let g_tilde = spec.log_partition(theta_tilde)?;
    let g = spec.log_partition(theta)?;
    let grad = spec.link(theta)?;
    Ok(g_tilde - g - grad.0.dot(&(&theta_tilde.0 - &theta.0)))
}

/// Validates combination weights and returns their sum.
fn check_weights(weights: &[f64], expected_len: usize) -> Result<f64> {
    if weights.len() != expected_len {
        return Err(EmError::invalid_argument(format!(
            "{} weights for {} parameters",
            weights.len(),
            expected_len
        )));
    }
    if expected_len == 0 {
        return Err(EmError::invalid_argument("nothing to combine"));
    }
    if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
        return Err(EmError::invalid_argument(format!(
            "combination weight {i} must be a finite nonnegative number, got {}",
            weights[i]
        )));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(EmError::invalid_argument(
            "combination weights must not all be zero",
        ));
    }
    Ok(total)
}

/// Weighted average of expectation parameters: the unique minimizer of
/// `sum_m alpha_m (G(theta~) - theta~ . mu_m)` expressed in dual
/// coordinates.  "Partial" because only the linear part of each divergence
/// enters the objective.
pub fn combine_partial(
    spec: &ExpFamSpec,
    weights: &[f64],
    duals: &[ExpectationParams],
) -> Result<ExpectationParams> {
    let total = check_weights(weights, duals.len())?;
    let mut acc = DVector::zeros(spec.dim_stat());
    for (w, mu) in weights.iter().zip(duals) {
        spec.check_expectation(mu)?;
        acc += *w * &mu.0;
    }
    Ok(ExpectationParams(acc / total))
}

/// Minimizer of `sum_m alpha_m D_G(theta~, theta_m)` over `theta~`:
/// the natural parameter whose dual is the weighted average of the inputs'
/// duals, `g^{-1}((sum alpha_m g(theta_m)) / sum alpha_m)`.
pub fn combine_forward(
    spec: &ExpFamSpec,
    weights: &[f64],
    thetas: &[NaturalParams],
) -> Result<NaturalParams> {
    check_weights(weights, thetas.len())?;
    let duals: Vec<ExpectationParams> =
        thetas.iter().map(|t| spec.link(t)).collect::<Result<_>>()?;
    let combined = combine_partial(spec, weights, &duals)?;
    spec.inverse_link(&combined)
}

/// Minimizer of `sum_m alpha_m D_{G*}(mu_m, mu~)` over `mu~`: the weighted
/// average of the duals.  Numerically identical to [`combine_partial`]; the
/// two views differ in which divergence they optimize, and the tests
/// exercise the corresponding triangular equalities separately.
pub fn combine_backward(
    spec: &ExpFamSpec,
    weights: &[f64],
    duals: &[ExpectationParams],
) -> Result<ExpectationParams> {
    combine_partial(spec, weights, duals)
}
