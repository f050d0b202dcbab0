//! Finite mixtures of an exponential family: posteriors, likelihood, batch
//! EM, the inertia-penalized online EM update, and the divergence between
//! two mixtures.
//!
//! The online step minimizes `U(. | batch) + (1/eta) * D(current, .)`, where
//! `U` is the EM upper bound with responsibilities frozen at the current
//! parameters and `D` is [`mixture_divergence`].  Both pieces separate over
//! the weight vector and the per-component parameters, so the minimizer is
//! closed-form: every statistic is a convex combination of its current value
//! and the mini-batch estimate,
//!
//! ```text
//! w~_h  = (w_h / eta + mean_n gamma_{n,h}) / (1/eta + 1)
//! mu~_h = (w_h mu_h / eta + mean_n gamma_{n,h} phi(v_n))
//!         / (w_h / eta + mean_n gamma_{n,h})
//! ```
//!
//! `eta -> inf` recovers the classical batch M-step, `eta -> 0` leaves the
//! model unchanged, and for any `eta` the mini-batch negative log-likelihood
//! cannot increase.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{EmError, Result};
use crate::expfam::{bregman_divergence, ExpFamSpec, ExpectationParams, NaturalParams};
use crate::numeric::{is_probability_simplex, kl_simplex, log_sum_exp};

/// Denominator threshold below which a component is considered to have
/// received no mass and is left untouched by an update.
const COMPONENT_DEATH_THRESHOLD: f64 = 1e-12;

/// A `k`-component mixture with expectation-coordinate components.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureModel {
    spec: ExpFamSpec,
    weights: DVector<f64>,
    components: Vec<ExpectationParams>,
}

/// Responsibilities `gamma_{n,h} = P(h | v_n)`, one row per observation.
#[derive(Clone, Debug, PartialEq)]
pub struct MixturePosterior {
    pub gamma: DMatrix<f64>,
}

impl MixtureModel {
    /// Validates the invariants: weights on the simplex, every component in
    /// the image of the link map.
    pub fn new(
        spec: ExpFamSpec,
        weights: DVector<f64>,
        components: Vec<ExpectationParams>,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(EmError::invalid_argument(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if !is_probability_simplex(weights.as_slice(), 1e-12) {
            return Err(EmError::invalid_parameter(
                "mixture weights must be nonnegative and sum to 1",
            ));
        }
        for (h, mu) in components.iter().enumerate() {
            spec.check_expectation(mu)
                .map_err(|e| EmError::invalid_parameter(format!("component {h}: {e}")))?;
        }
        Ok(MixtureModel {
            spec,
            weights,
            components,
        })
    }

    /// Initialization used by the experiment harness: uniform weights,
    /// component means drawn from the batch mean perturbed by unit Gaussian
    /// noise scaled per-coordinate by the data standard deviation, and the
    /// data covariance as every component's covariance.
    pub fn init_from_data<R: Rng + ?Sized>(
        spec: ExpFamSpec,
        k: usize,
        batch: &[DVector<f64>],
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 {
            return Err(EmError::invalid_argument("k must be at least 1"));
        }
        if batch.is_empty() {
            return Err(EmError::invalid_argument("empty batch"));
        }
        let d = spec.obs_dim();
        let n = batch.len() as f64;
        let mut mean = DVector::zeros(d);
        for v in batch {
            if v.len() != d {
                return Err(EmError::invalid_argument(format!(
                    "observation has dimension {}, spec expects {d}",
                    v.len()
                )));
            }
            mean += v;
        }
        mean /= n;
        let mut cov = DMatrix::zeros(d, d);
        for v in batch {
            let r = v - &mean;
            cov += &r * r.transpose();
        }
        cov /= n;

        let std: DVector<f64> = cov.diagonal().map(|x| x.max(1e-12).sqrt());
        let weights = DVector::from_element(k, 1.0 / k as f64);
        let mut components = Vec::with_capacity(k);
        for _ in 0..k {
            match &spec {
                ExpFamSpec::Gaussian { .. } => {
                    let noise = DVector::from_iterator(
                        d,
                        (0..d).map(|i| std[i] * rng.sample::<f64, _>(rand_distr::StandardNormal)),
                    );
                    let mu = spec.gaussian_from_mean_cov(&(&mean + noise), &cov)?;
                    components.push(spec.floor_expectation(mu));
                }
                ExpFamSpec::Poisson => {
                    let noise: f64 = rng.sample(rand_distr::StandardNormal);
                    // Rates must stay positive; clamp far below the data mean.
                    let rate = (mean[0] + std[0] * noise).max(1e-3 * mean[0].max(1.0));
                    components.push(ExpectationParams(DVector::from_element(1, rate)));
                }
            }
        }
        MixtureModel::new(spec, weights, components)
    }

    pub fn spec(&self) -> &ExpFamSpec {
        &self.spec
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn components(&self) -> &[ExpectationParams] {
        &self.components
    }

    /// Natural parameters and log partition values of all components.
    fn naturals(&self) -> Result<Vec<(NaturalParams, f64)>> {
        self.components
            .iter()
            .map(|mu| {
                let theta = self.spec.inverse_link(mu)?;
                let g = self.spec.log_partition(&theta)?;
                Ok((theta, g))
            })
            .collect()
    }

    /// `log(w_h P(v_n | theta_h))` for every observation and component,
    /// plus the sufficient statistics of the batch.
    fn log_joint(&self, batch: &[DVector<f64>]) -> Result<(DMatrix<f64>, Vec<DVector<f64>>)> {
        if batch.is_empty() {
            return Err(EmError::invalid_argument("empty batch"));
        }
        let naturals = self.naturals()?;
        let k = self.k();
        let mut log_joint = DMatrix::zeros(batch.len(), k);
        let mut stats = Vec::with_capacity(batch.len());
        for (n, v) in batch.iter().enumerate() {
            let phi = self
                .spec
                .suff_stat(v)
                .map_err(|e| EmError::invalid_argument(format!("observation {n}: {e}")))?;
            let base = self.spec.log_base_measure(v)?;
            for h in 0..k {
                let (theta, g) = &naturals[h];
                let ld = theta.0.dot(&phi) - g + base;
                let lw = if self.weights[h] > 0.0 {
                    self.weights[h].ln()
                } else {
                    f64::NEG_INFINITY
                };
                let entry = lw + ld;
                if entry.is_nan() {
                    return Err(EmError::numerical(
                        format!("observation {n}"),
                        format!("non-finite log-density under component {h}"),
                    ));
                }
                log_joint[(n, h)] = entry;
            }
            stats.push(phi);
        }
        Ok((log_joint, stats))
    }

    /// Posterior responsibilities, computed in log space.
    pub fn posterior(&self, batch: &[DVector<f64>]) -> Result<MixturePosterior> {
        let (log_joint, _) = self.log_joint(batch)?;
        let mut gamma = DMatrix::zeros(batch.len(), self.k());
        for n in 0..batch.len() {
            let row: Vec<f64> = log_joint.row(n).iter().cloned().collect();
            let lse = log_sum_exp(&row);
            if !lse.is_finite() {
                return Err(EmError::numerical(
                    format!("observation {n}"),
                    "zero total density across all components",
                ));
            }
            for h in 0..self.k() {
                gamma[(n, h)] = (log_joint[(n, h)] - lse).exp();
            }
        }
        Ok(MixturePosterior { gamma })
    }

    /// Mean negative log-likelihood of the batch,
    /// `-(1/N) sum_n ln sum_h w_h P(v_n | theta_h)`.
    pub fn nll(&self, batch: &[DVector<f64>]) -> Result<f64> {
        let (log_joint, _) = self.log_joint(batch)?;
        let mut total = 0.0;
        for n in 0..batch.len() {
            let row: Vec<f64> = log_joint.row(n).iter().cloned().collect();
            let lse = log_sum_exp(&row);
            if !lse.is_finite() {
                return Err(EmError::numerical(
                    format!("observation {n}"),
                    "zero total density across all components",
                ));
            }
            total -= lse;
        }
        Ok(total / batch.len() as f64)
    }

    /// Batch statistics: mean responsibilities and responsibility-weighted
    /// mean sufficient statistics.
    fn batch_statistics(
        &self,
        batch: &[DVector<f64>],
    ) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
        let (log_joint, stats) = self.log_joint(batch)?;
        let n = batch.len();
        let k = self.k();
        let mut gamma_mean = DVector::zeros(k);
        let mut stat_mean = vec![DVector::zeros(self.spec.dim_stat()); k];
        for row in 0..n {
            let logs: Vec<f64> = log_joint.row(row).iter().cloned().collect();
            let lse = log_sum_exp(&logs);
            if !lse.is_finite() {
                return Err(EmError::numerical(
                    format!("observation {row}"),
                    "zero total density across all components",
                ));
            }
            for h in 0..k {
                let g = (log_joint[(row, h)] - lse).exp();
                gamma_mean[h] += g;
                stat_mean[h].axpy(g, &stats[row], 1.0);
            }
        }
        gamma_mean /= n as f64;
        for s in &mut stat_mean {
            *s /= n as f64;
        }
        Ok((gamma_mean, stat_mean))
    }

    /// One online EM step with inertia strength `1/eta`.
    pub fn online_em_step(&self, batch: &[DVector<f64>], eta: f64) -> Result<MixtureModel> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(EmError::invalid_argument(format!(
                "eta must be a positive finite number, got {eta}"
            )));
        }
        let (gamma_mean, stat_mean) = self.batch_statistics(batch)?;
        let inv_eta = 1.0 / eta;
        let k = self.k();

        let mut weights = DVector::zeros(k);
        let mut components = Vec::with_capacity(k);
        for h in 0..k {
            weights[h] = (self.weights[h] * inv_eta + gamma_mean[h]) / (inv_eta + 1.0);
            let denom = self.weights[h] * inv_eta + gamma_mean[h];
            if denom < COMPONENT_DEATH_THRESHOLD {
                warn!("mixture component {h} received no mass; leaving it unchanged");
                components.push(self.components[h].clone());
                continue;
            }
            let numer = &self.components[h].0 * (self.weights[h] * inv_eta) + &stat_mean[h];
            let mu = ExpectationParams(numer / denom);
            components.push(self.spec.floor_expectation(mu));
        }
        MixtureModel::new(self.spec.clone(), weights, components)
    }

    /// Classical batch EM step (the `eta -> inf` limit of
    /// [`MixtureModel::online_em_step`]).
    pub fn batch_em_step(&self, batch: &[DVector<f64>]) -> Result<MixtureModel> {
        let (gamma_mean, stat_mean) = self.batch_statistics(batch)?;
        let k = self.k();
        let mut components = Vec::with_capacity(k);
        for h in 0..k {
            if gamma_mean[h] < COMPONENT_DEATH_THRESHOLD {
                warn!("mixture component {h} is empty in this batch; leaving it unchanged");
                components.push(self.components[h].clone());
                continue;
            }
            let mu = ExpectationParams(&stat_mean[h] / gamma_mean[h]);
            components.push(self.spec.floor_expectation(mu));
        }
        MixtureModel::new(self.spec.clone(), gamma_mean, components)
    }

    /// Stochastic-approximation reference update: blends the complete-data
    /// sufficient statistics `(w_h, w_h mu_h)` towards their batch estimates
    /// with step `eta_t` and re-solves the M-step.  Implemented
    /// independently of [`MixtureModel::online_em_step`]; with
    /// `eta = eta_t / (1 - eta_t)` the two coincide, which the tests verify.
    pub fn cappe_oracle_step(&self, batch: &[DVector<f64>], eta_t: f64) -> Result<MixtureModel> {
        if !(eta_t > 0.0 && eta_t < 1.0) {
            return Err(EmError::invalid_argument(format!(
                "eta_t must lie strictly inside (0, 1), got {eta_t}"
            )));
        }
        let (gamma_mean, stat_mean) = self.batch_statistics(batch)?;
        let k = self.k();
        let mut weights = DVector::zeros(k);
        let mut components = Vec::with_capacity(k);
        for h in 0..k {
            // Running statistics implied by the current model.
            let s0 = self.weights[h];
            let s1 = &self.components[h].0 * self.weights[h];
            // Blend towards the batch statistics.
            let s0_new = s0 + eta_t * (gamma_mean[h] - s0);
            let s1_new = &s1 + (&stat_mean[h] - &s1) * eta_t;
            weights[h] = s0_new;
            if s0_new < COMPONENT_DEATH_THRESHOLD {
                warn!("mixture component {h} received no mass; leaving it unchanged");
                components.push(self.components[h].clone());
                continue;
            }
            components.push(
                self.spec
                    .floor_expectation(ExpectationParams(s1_new / s0_new)),
            );
        }
        MixtureModel::new(self.spec.clone(), weights, components)
    }

    /// Draws `count` observations from the mixture.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<DVector<f64>>> {
        let naturals = self.naturals()?;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let h = sample_categorical(&self.weights, rng);
            out.push(self.spec.sample(&naturals[h].0, rng)?);
        }
        Ok(out)
    }
}

/// Draws an index from an unnormalized-nonnegative weight vector whose
/// entries sum to ~1.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(weights: &DVector<f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Relative entropy between the complete-data distributions of two aligned
/// mixtures: `sum_h w_h ln(w_h / w~_h) + sum_h w_h D_G(theta~_h, theta_h)`.
pub fn mixture_divergence(model_a: &MixtureModel, model_b: &MixtureModel) -> Result<f64> {
    if model_a.spec != model_b.spec {
        return Err(EmError::invalid_argument(
            "mixture divergence requires models over the same family",
        ));
    }
    if model_a.k() != model_b.k() {
        return Err(EmError::invalid_argument(format!(
            "mixture divergence requires equal component counts, got {} and {}",
            model_a.k(),
            model_b.k()
        )));
    }
    let weight_term = kl_simplex(model_a.weights.as_slice(), model_b.weights.as_slice());
    if weight_term.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let mut component_term = 0.0;
    for h in 0..model_a.k() {
        if model_a.weights[h] == 0.0 {
            continue;
        }
        let theta_a = model_a.spec.inverse_link(&model_a.components[h])?;
        let theta_b = model_b.spec.inverse_link(&model_b.components[h])?;
        component_term +=
            model_a.weights[h] * bregman_divergence(&model_a.spec, &theta_b, &theta_a)?;
    }
    Ok(weight_term + component_term)
}
