//! Combining locally trained models into one global model by minimizing the
//! weighted sum of relative entropies `sum_m alpha_m D(Theta^(m), Theta~)`.
//!
//! For mixtures and absorbing HMMs the minimizer is closed-form: every
//! parameter is a convex combination of the models' complete-data
//! statistics (weights scaled by `alpha_m`, component statistics further
//! scaled by the component's mass or expected usage).  A plain arithmetic
//! average of the parameters — the `combine_simple_average` baseline —
//! differs whenever the component weights differ across models.
//!
//! When no closed form exists (compound Dirichlet) or when one wants to
//! combine through data alone, the sampled forms draw pseudo-observations
//! from each model and minimize the weighted sum of the resulting EM upper
//! bounds; as the pseudo-sample count grows this converges to the exact
//! combination.

use log::warn;
use nalgebra::DVector;
use rand::Rng;

use crate::dirichlet::{newton_minimize, DirichletModel, PolyaObjective};
use crate::error::{EmError, Result};
use crate::expfam::{ExpFamSpec, ExpectationParams};
use crate::hmm::HmmModel;
use crate::mixture::MixtureModel;

/// Threshold below which a component's combined mass counts as zero.
const MASS_THRESHOLD: f64 = 1e-12;

/// Models of one family paired with nonnegative combination weights.
pub struct WeightedModels<'a, M> {
    models: &'a [M],
    weights: &'a [f64],
}

impl<'a, M> WeightedModels<'a, M> {
    /// Requires one weight per model and a positive weight total.
    pub fn new(models: &'a [M], weights: &'a [f64]) -> Result<Self> {
        if models.is_empty() {
            return Err(EmError::invalid_argument("no models to combine"));
        }
        if weights.len() != models.len() {
            return Err(EmError::invalid_argument(format!(
                "{} weights for {} models",
                weights.len(),
                models.len()
            )));
        }
        for (m, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(EmError::invalid_argument(format!(
                    "weight {m} is {w}; weights must be finite and nonnegative"
                )));
            }
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(EmError::invalid_argument("weights must not all be zero"));
        }
        Ok(WeightedModels { models, weights })
    }

    pub fn models(&self) -> &[M] {
        self.models
    }

    pub fn weights(&self) -> &[f64] {
        self.weights
    }

    fn heaviest(&self) -> usize {
        let mut best = 0;
        for (m, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = m;
            }
        }
        best
    }
}

fn check_mixture_shapes(wm: &WeightedModels<MixtureModel>) -> Result<()> {
    let first = &wm.models()[0];
    for model in wm.models() {
        if model.spec() != first.spec() || model.k() != first.k() {
            return Err(EmError::invalid_argument(
                "mixtures must share one family and component count",
            ));
        }
    }
    Ok(())
}

/// Exact minimizer of `sum_m alpha_m * mixture_divergence(model_m, .)`:
///
/// ```text
/// w^c_h  = sum_m a_m w^m_h / sum_m a_m
/// mu^c_h = sum_m a_m w^m_h mu^m_h / sum_m a_m w^m_h
/// ```
///
/// A component with zero combined mass is copied from the heaviest model.
pub fn combine_mixtures(wm: &WeightedModels<MixtureModel>) -> Result<MixtureModel> {
    check_mixture_shapes(wm)?;
    let spec = wm.models()[0].spec().clone();
    let k = wm.models()[0].k();
    let total: f64 = wm.weights().iter().sum();

    let mut weights = DVector::zeros(k);
    let mut stats = vec![DVector::zeros(spec.dim_stat()); k];
    for (model, &a) in wm.models().iter().zip(wm.weights()) {
        for h in 0..k {
            weights[h] += a * model.weights()[h] / total;
            stats[h].axpy(a * model.weights()[h], &model.components()[h].0, 1.0);
        }
    }
    let mut components = Vec::with_capacity(k);
    for h in 0..k {
        let mass = total * weights[h];
        if mass < MASS_THRESHOLD {
            warn!("component {h} has zero combined mass; copying it from the heaviest model");
            components.push(wm.models()[wm.heaviest()].components()[h].clone());
        } else {
            components.push(spec.floor_expectation(ExpectationParams(&stats[h] / mass)));
        }
    }
    MixtureModel::new(spec, weights, components)
}

/// Baseline: arithmetic `alpha`-weighted average of every parameter — the
/// mixture weights and, per component, the mean and covariance (or rate) —
/// with no mass reweighting.
pub fn combine_simple_average(wm: &WeightedModels<MixtureModel>) -> Result<MixtureModel> {
    check_mixture_shapes(wm)?;
    let spec = wm.models()[0].spec().clone();
    let k = wm.models()[0].k();
    let total: f64 = wm.weights().iter().sum();

    let mut weights = DVector::zeros(k);
    let gaussian_dim = match &spec {
        ExpFamSpec::Gaussian { dim } => Some(*dim),
        ExpFamSpec::Poisson => None,
    };
    let mut components = Vec::with_capacity(k);
    for h in 0..k {
        for (model, &a) in wm.models().iter().zip(wm.weights()) {
            weights[h] += a * model.weights()[h] / total;
        }
        let mu = if let Some(dim) = gaussian_dim {
            let mut mean = DVector::zeros(dim);
            let mut cov = nalgebra::DMatrix::zeros(dim, dim);
            for (model, &a) in wm.models().iter().zip(wm.weights()) {
                let (m, c) = spec.gaussian_mean_cov(&model.components()[h])?;
                mean += m * (a / total);
                cov += c * (a / total);
            }
            spec.gaussian_from_mean_cov(&mean, &cov)?
        } else {
            let mut mu = DVector::zeros(spec.dim_stat());
            for (model, &a) in wm.models().iter().zip(wm.weights()) {
                mu.axpy(a / total, &model.components()[h].0, 1.0);
            }
            ExpectationParams(mu)
        };
        components.push(mu);
    }
    MixtureModel::new(spec, weights, components)
}

/// Exact minimizer of `sum_m alpha_m * hmm_divergence(model_m, .)`: the
/// initial distribution averages directly, while transition rows and
/// emissions average with each model's expected state usages as extra
/// weights.  Absorbing rows are preserved.
pub fn combine_hmms(wm: &WeightedModels<HmmModel>) -> Result<HmmModel> {
    let first = &wm.models()[0];
    for model in wm.models() {
        if model.spec() != first.spec()
            || model.state_count() != first.state_count()
            || model.transient_count() != first.transient_count()
        {
            return Err(EmError::invalid_argument(
                "hmms must share one family and state layout",
            ));
        }
    }
    let spec = first.spec().clone();
    let k = first.state_count();
    let s = first.transient_count();
    let total: f64 = wm.weights().iter().sum();
    let usages: Vec<DVector<f64>> = wm
        .models()
        .iter()
        .map(|m| m.expected_usage())
        .collect::<Result<_>>()?;

    let mut initial = DVector::zeros(k);
    let mut transitions = first.transitions().clone();
    let mut emissions = Vec::with_capacity(s);
    for (model, &a) in wm.models().iter().zip(wm.weights()) {
        initial.axpy(a / total, model.initial(), 1.0);
    }
    for h in 0..s {
        let mass: f64 = wm
            .weights()
            .iter()
            .zip(&usages)
            .map(|(&a, u)| a * u[h])
            .sum();
        if mass < MASS_THRESHOLD {
            warn!("state {h} has zero combined usage; copying it from the heaviest model");
            let heavy = &wm.models()[wm.heaviest()];
            for j in 0..k {
                transitions[(h, j)] = heavy.transitions()[(h, j)];
            }
            emissions.push(heavy.emissions()[h].clone());
            continue;
        }
        let mut stat = DVector::zeros(spec.dim_stat());
        for j in 0..k {
            transitions[(h, j)] = 0.0;
        }
        for ((model, &a), u) in wm.models().iter().zip(wm.weights()).zip(&usages) {
            for j in 0..k {
                transitions[(h, j)] += a * u[h] * model.transitions()[(h, j)] / mass;
            }
            stat.axpy(a * u[h] / mass, &model.emissions()[h].0, 1.0);
        }
        emissions.push(spec.floor_expectation(ExpectationParams(stat)));
    }
    HmmModel::new(spec, initial, transitions, emissions, s)
}

/// Sampled combination for mixtures: draws `counts[m]` observations from
/// each model, computes their posterior statistics under that same model,
/// and runs the pooled weighted M-step.  Converges to [`combine_mixtures`]
/// as the counts grow.
pub fn combine_mixtures_sampled<R: Rng + ?Sized>(
    wm: &WeightedModels<MixtureModel>,
    counts: &[usize],
    rng: &mut R,
) -> Result<MixtureModel> {
    check_mixture_shapes(wm)?;
    if counts.len() != wm.models().len() {
        return Err(EmError::invalid_argument(format!(
            "{} sample counts for {} models",
            counts.len(),
            wm.models().len()
        )));
    }
    if counts.contains(&0) {
        return Err(EmError::invalid_argument(
            "every sample count must be positive",
        ));
    }
    let spec = wm.models()[0].spec().clone();
    let k = wm.models()[0].k();
    let total: f64 = wm.weights().iter().sum();

    // Pooled posterior statistics: gamma means and gamma-weighted
    // sufficient-statistic means, each alpha-weighted across models.
    let mut gamma_mean = DVector::zeros(k);
    let mut stat_mean = vec![DVector::zeros(spec.dim_stat()); k];
    for ((model, &a), &count) in wm.models().iter().zip(wm.weights()).zip(counts) {
        let sample = model.sample(count, rng)?;
        let posterior = model.posterior(&sample)?;
        for (idx, x) in sample.iter().enumerate() {
            let phi = spec.suff_stat(x)?;
            for h in 0..k {
                let g = posterior.gamma[(idx, h)] * a / (total * count as f64);
                gamma_mean[h] += g;
                stat_mean[h].axpy(g, &phi, 1.0);
            }
        }
    }
    let mut components = Vec::with_capacity(k);
    for h in 0..k {
        if gamma_mean[h] < MASS_THRESHOLD {
            warn!("component {h} received no sampled mass; copying it from the heaviest model");
            components.push(wm.models()[wm.heaviest()].components()[h].clone());
        } else {
            components
                .push(spec.floor_expectation(ExpectationParams(&stat_mean[h] / gamma_mean[h])));
        }
    }
    MixtureModel::new(spec, gamma_mean, components)
}

/// Sampled combination for compound Dirichlet models: one Newton solve on
/// the weighted sum of per-model upper bounds, each formed on that model's
/// own pseudo-documents, warm-started at the weighted-average parameters.
pub fn combine_dirichlets_sampled<R: Rng + ?Sized>(
    wm: &WeightedModels<DirichletModel>,
    counts: &[usize],
    words_per_doc: usize,
    rng: &mut R,
) -> Result<DirichletModel> {
    let d = wm.models()[0].dim();
    if wm.models().iter().any(|m| m.dim() != d) {
        return Err(EmError::invalid_argument(
            "dirichlet models must share one dimension",
        ));
    }
    if counts.len() != wm.models().len() {
        return Err(EmError::invalid_argument(format!(
            "{} sample counts for {} models",
            counts.len(),
            wm.models().len()
        )));
    }
    let total: f64 = wm.weights().iter().sum();
    let mut parts = Vec::with_capacity(wm.models().len());
    let mut init = DVector::zeros(d);
    for ((model, &a), &count) in wm.models().iter().zip(wm.weights()).zip(counts) {
        if count == 0 {
            return Err(EmError::invalid_argument(
                "every sample count must be positive",
            ));
        }
        let docs = model.sample_documents(count, words_per_doc, rng)?;
        parts.push((a / total, model.upper_bound_objective(&docs)?));
        init.axpy(a / total, model.alpha(), 1.0);
    }
    let objective = PolyaObjective::weighted_sum(&parts)?;
    let outcome = newton_minimize(&objective, &init, 1e-10, 200)?;
    if !outcome.converged {
        warn!(
            "dirichlet combination Newton stopped at gradient norm {} after {} iterations",
            outcome.gradient_norm, outcome.iterations
        );
    }
    DirichletModel::new(outcome.alpha)
}
