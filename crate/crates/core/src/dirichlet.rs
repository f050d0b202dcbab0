//! Compound Dirichlet (Pólya) models over word-count vectors: the exact
//! marginal likelihood, the EM upper bound with its gradient and Hessian, a
//! damped Newton solver exploiting the diagonal-plus-rank-one Hessian, and
//! the sampled-inertia online EM update.
//!
//! A document is a count vector `v` of `L = sum_i v_i` words drawn from a
//! topic `h ~ Dirichlet(alpha)`; integrating the topic out gives the
//! Dirichlet-multinomial marginal.  The EM upper bound at the current model
//! `alpha` is, up to additive constants and averaged per document,
//!
//! ```text
//! U(alpha~) = -ln G(alpha~_0) + sum_j ln G(alpha~_j) - sum_j (alpha~_j - 1) s_j
//! s_j = mean_n [ psi(v_{nj} + alpha_j) - psi(L_n + alpha_0) ]
//! ```
//!
//! written here in minimization form (the sign convention throughout this
//! module: `U` decreases as the fit improves, its gradient is
//! `psi(a~_i) - psi(a~_0) - s_i`, and its Hessian
//! `diag(psi_1(a~_j)) - psi_1(a~_0) 11'` is positive definite for `d >= 2`).
//!
//! The exact relative-entropy inertia term is intractable — it sums over all
//! count vectors — so the online step follows the sampled form: draw `N'`
//! pseudo-documents from the current model and add `1/eta` times their upper
//! bound to the batch objective.  The sum is again a Pólya upper bound, so
//! one Newton solve performs the update.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{EmError, Result};
use crate::numeric::{digamma, ln_gamma, trigamma};

/// Smallest value any coordinate may take during Newton iteration.
pub const ALPHA_FLOOR: f64 = 1e-10;

/// A Dirichlet parameter vector with its cached total.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletModel {
    alpha: DVector<f64>,
    alpha0: f64,
}

/// One document: nonnegative word counts with at least one word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountVector {
    counts: Vec<u64>,
    total: u64,
}

impl CountVector {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(EmError::invalid_argument("empty count vector"));
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(EmError::invalid_argument(
                "count vector must contain at least one word",
            ));
        }
        Ok(CountVector { counts, total })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }
}

impl DirichletModel {
    pub fn new(alpha: DVector<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(EmError::invalid_argument("alpha must be nonempty"));
        }
        for (i, &a) in alpha.iter().enumerate() {
            if !(a > 0.0) || !a.is_finite() {
                return Err(EmError::invalid_parameter(format!(
                    "alpha coordinate {i} must be positive and finite, got {a}"
                )));
            }
        }
        let alpha0 = alpha.sum();
        Ok(DirichletModel { alpha, alpha0 })
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    fn check_batch(&self, batch: &[CountVector]) -> Result<()> {
        if batch.is_empty() {
            return Err(EmError::invalid_argument("empty document batch"));
        }
        if let Some(doc) = batch.iter().find(|doc| doc.dim() != self.dim()) {
            return Err(EmError::invalid_argument(format!(
                "document has {} coordinates, model has {}",
                doc.dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Mean negative log marginal likelihood per document:
    /// `-ln [ L! G(a_0) prod_j G(a_j + v_j) / (prod_j v_j! prod_j G(a_j) G(a_0 + L)) ]`.
    pub fn nll(&self, batch: &[CountVector]) -> Result<f64> {
        self.check_batch(batch)?;
        let mut total = 0.0;
        for doc in batch {
            let length = doc.total as f64;
            let mut log_marginal =
                ln_gamma(length + 1.0) + ln_gamma(self.alpha0) - ln_gamma(self.alpha0 + length);
            for (j, &v) in doc.counts.iter().enumerate() {
                let v = v as f64;
                log_marginal +=
                    ln_gamma(self.alpha[j] + v) - ln_gamma(self.alpha[j]) - ln_gamma(v + 1.0);
            }
            total -= log_marginal;
        }
        Ok(total / batch.len() as f64)
    }

    /// Posterior expectations `s_j = mean_n E[ln h_j | v_n]` under this
    /// model — the only data statistic the upper bound needs.
    pub fn posterior_log_expectations(&self, batch: &[CountVector]) -> Result<DVector<f64>> {
        self.check_batch(batch)?;
        let mut s = DVector::zeros(self.dim());
        for doc in batch {
            let tail = digamma(self.alpha0 + doc.total as f64);
            for (j, &v) in doc.counts.iter().enumerate() {
                s[j] += digamma(self.alpha[j] + v as f64) - tail;
            }
        }
        Ok(s / batch.len() as f64)
    }

    /// The EM upper bound on this batch with responsibilities frozen at the
    /// current model, as a Newton-ready objective.
    pub fn upper_bound_objective(&self, batch: &[CountVector]) -> Result<PolyaObjective> {
        Ok(PolyaObjective::new(
            1.0,
            self.posterior_log_expectations(batch)?,
        ))
    }

    /// Ancestral sampling: `h ~ Dirichlet(alpha)`, then `words_per_doc`
    /// categorical draws from `h`.
    pub fn sample_documents<R: Rng + ?Sized>(
        &self,
        count: usize,
        words_per_doc: usize,
        rng: &mut R,
    ) -> Result<Vec<CountVector>> {
        if words_per_doc == 0 {
            return Err(EmError::invalid_argument(
                "words_per_doc must be at least 1",
            ));
        }
        let gammas: Vec<Gamma<f64>> = self
            .alpha
            .iter()
            .map(|&a| {
                Gamma::new(a, 1.0).map_err(|e| {
                    EmError::numerical("dirichlet sampling", format!("invalid gamma shape: {e}"))
                })
            })
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut h = DVector::from_iterator(self.dim(), gammas.iter().map(|g| g.sample(rng)));
            let total = h.sum();
            if !(total > 0.0) {
                // Possible only for tiny alpha where every gamma draw
                // underflows; fall back to the mean direction.
                h = self.alpha.clone();
            }
            let h = &h / h.sum();
            let mut counts = vec![0u64; self.dim()];
            for _ in 0..words_per_doc {
                counts[crate::mixture::sample_categorical(&h, rng)] += 1;
            }
            out.push(CountVector::new(counts)?);
        }
        Ok(out)
    }

    /// One batch Newton-EM step: minimize the upper bound on `batch`,
    /// warm-started at the current parameters.
    pub fn batch_em_step(&self, batch: &[CountVector]) -> Result<DirichletModel> {
        let objective = self.upper_bound_objective(batch)?;
        let outcome = newton_minimize(&objective, &self.alpha, 1e-10, 200)?;
        if !outcome.converged {
            warn!(
                "batch EM Newton stopped at gradient norm {} after {} iterations",
                outcome.gradient_norm, outcome.iterations
            );
        }
        DirichletModel::new(outcome.alpha)
    }

    /// One online EM step with the sampled inertia term: draws
    /// `pseudo_count` documents from the current model (each of
    /// `pseudo_words` words, defaulting to the batch's mean length) and
    /// minimizes `U(.|batch) + (1/eta) U(.|pseudo)`.
    pub fn online_em_step_sampled<R: Rng + ?Sized>(
        &self,
        batch: &[CountVector],
        eta: f64,
        pseudo_count: usize,
        pseudo_words: Option<usize>,
        rng: &mut R,
    ) -> Result<DirichletModel> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(EmError::invalid_argument(format!(
                "eta must be a positive finite number, got {eta}"
            )));
        }
        if pseudo_count == 0 {
            return Err(EmError::invalid_argument("pseudo_count must be at least 1"));
        }
        self.check_batch(batch)?;
        let words = match pseudo_words {
            Some(w) if w >= 1 => w,
            Some(_) => return Err(EmError::invalid_argument("pseudo_words must be at least 1")),
            None => {
                let mean = batch.iter().map(|d| d.total as f64).sum::<f64>() / batch.len() as f64;
                (mean.round() as usize).max(1)
            }
        };
        let pseudo = self.sample_documents(pseudo_count, words, rng)?;
        let s_data = self.posterior_log_expectations(batch)?;
        let s_pseudo = self.posterior_log_expectations(&pseudo)?;
        let inv_eta = 1.0 / eta;
        let objective = PolyaObjective::new(1.0 + inv_eta, s_data + s_pseudo * inv_eta);
        let outcome = newton_minimize(&objective, &self.alpha, 1e-10, 200)?;
        if !outcome.converged {
            warn!(
                "online EM Newton stopped at gradient norm {} after {} iterations",
                outcome.gradient_norm, outcome.iterations
            );
        }
        DirichletModel::new(outcome.alpha)
    }
}

/// Gradient of the upper bound formed at `model_at`, evaluated at
/// `alpha_tilde` (minimization sign convention; see the module docs).
pub fn upper_bound_gradient(
    model_at: &DirichletModel,
    alpha_tilde: &DVector<f64>,
    batch: &[CountVector],
) -> Result<DVector<f64>> {
    let objective = model_at.upper_bound_objective(batch)?;
    objective.gradient(alpha_tilde)
}

/// Scalar upper bound formed at `model_at`, evaluated at `alpha_tilde`.
pub fn upper_bound_value(
    model_at: &DirichletModel,
    alpha_tilde: &DVector<f64>,
    batch: &[CountVector],
) -> Result<f64> {
    let objective = model_at.upper_bound_objective(batch)?;
    objective.value(alpha_tilde)
}

/// Hessian of the upper bound at `alpha_tilde`:
/// `diag(psi_1(a_1),...,psi_1(a_d)) - psi_1(a_0) 11'`.  The data statistics
/// enter the bound linearly, so the Hessian depends on `alpha_tilde` alone;
/// it is positive definite for `d >= 2` (and the zero scalar for `d = 1`).
pub fn upper_bound_hessian(alpha_tilde: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_positive(alpha_tilde)?;
    let d = alpha_tilde.len();
    let tail = trigamma(alpha_tilde.sum());
    let mut h = DMatrix::from_element(d, d, -tail);
    for j in 0..d {
        h[(j, j)] += trigamma(alpha_tilde[j]);
    }
    Ok(h)
}

fn check_positive(alpha: &DVector<f64>) -> Result<()> {
    if alpha.is_empty() {
        return Err(EmError::invalid_argument("alpha must be nonempty"));
    }
    for (i, &a) in alpha.iter().enumerate() {
        if !(a > 0.0) || !a.is_finite() {
            return Err(EmError::invalid_argument(format!(
                "alpha coordinate {i} must be positive and finite, got {a}"
            )));
        }
    }
    Ok(())
}

/// An objective the Newton solver can minimize.
pub trait NewtonObjective {
    fn value(&self, alpha: &DVector<f64>) -> Result<f64>;
    fn gradient(&self, alpha: &DVector<f64>) -> Result<DVector<f64>>;
    /// Solves `H(alpha) x = rhs` for the objective's Hessian.
    fn solve_newton_system(&self, alpha: &DVector<f64>, rhs: &DVector<f64>)
        -> Result<DVector<f64>>;
}

/// A (possibly weighted) Pólya EM upper bound:
/// `w (-ln G(a_0) + sum_j ln G(a_j)) - sum_j (a_j - 1) s_j`.
///
/// Sums of upper bounds formed at different models stay in this family —
/// the weighted statistics just add — which is what makes both the sampled
/// inertia step and the sampled combiner single Newton solves.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyaObjective {
    gamma_weight: f64,
    s: DVector<f64>,
}

impl PolyaObjective {
    pub fn new(gamma_weight: f64, s: DVector<f64>) -> Self {
        PolyaObjective { gamma_weight, s }
    }

    pub fn gamma_weight(&self) -> f64 {
        self.gamma_weight
    }

    pub fn log_expectations(&self) -> &DVector<f64> {
        &self.s
    }

    /// `sum_m weights[m] * objectives[m]`, exactly representable in-family.
    pub fn weighted_sum(parts: &[(f64, PolyaObjective)]) -> Result<PolyaObjective> {
        let Some(((_, first), _)) = parts.split_first() else {
            return Err(EmError::invalid_argument("no objectives to sum"));
        };
        let mut weight = 0.0;
        let mut s = DVector::zeros(first.s.len());
        for (w, part) in parts.iter() {
            if part.s.len() != s.len() {
                return Err(EmError::invalid_argument(
                    "objectives have mismatched dimensions",
                ));
            }
            weight += w * part.gamma_weight;
            s += &part.s * *w;
        }
        Ok(PolyaObjective::new(weight, s))
    }
}

impl NewtonObjective for PolyaObjective {
    fn value(&self, alpha: &DVector<f64>) -> Result<f64> {
        check_positive(alpha)?;
        let mut value = -self.gamma_weight * ln_gamma(alpha.sum());
        for (j, &a) in alpha.iter().enumerate() {
            value += self.gamma_weight * ln_gamma(a) - (a - 1.0) * self.s[j];
        }
        Ok(value)
    }

    fn gradient(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        check_positive(alpha)?;
        let tail = digamma(alpha.sum());
        Ok(DVector::from_iterator(
            alpha.len(),
            alpha
                .iter()
                .zip(self.s.iter())
                .map(|(&a, &s)| self.gamma_weight * (digamma(a) - tail) - s),
        ))
    }

    fn solve_newton_system(
        &self,
        alpha: &DVector<f64>,
        rhs: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        // H = w (D - c 11') with D = diag(psi_1(a_j)), c = psi_1(a_0);
        // Sherman-Morrison gives H^{-1} r = (D^{-1} r + c (1' D^{-1} r) /
        // (1 - c 1' D^{-1} 1) D^{-1} 1) / w.
        check_positive(alpha)?;
        let c = trigamma(alpha.sum());
        let d_inv_rhs = DVector::from_iterator(
            alpha.len(),
            alpha.iter().zip(rhs.iter()).map(|(&a, &r)| r / trigamma(a)),
        );
        let d_inv_ones =
            DVector::from_iterator(alpha.len(), alpha.iter().map(|&a| 1.0 / trigamma(a)));
        let denom = 1.0 - c * d_inv_ones.sum();
        if !(denom > 1e-14) {
            return Err(EmError::numerical(
                "newton system",
                format!("Hessian is singular (Sherman-Morrison denominator {denom})"),
            ));
        }
        let correction = c * d_inv_rhs.sum() / denom;
        Ok((d_inv_rhs + d_inv_ones * correction) / self.gamma_weight)
    }
}

/// Result of a Newton minimization.
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonOutcome {
    pub alpha: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

/// Damped Newton minimization over the positive orthant: full Newton steps
/// with halving until the iterate stays above [`ALPHA_FLOOR`] and the value
/// satisfies an Armijo decrease.  Non-convergence within `max_iter` is
/// reported through the outcome, not as an error.
pub fn newton_minimize<O: NewtonObjective>(
    objective: &O,
    alpha_init: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<NewtonOutcome> {
    if !(tol > 0.0) {
        return Err(EmError::invalid_argument("tol must be positive"));
    }
    check_positive(alpha_init)?;
    let mut alpha = alpha_init.clone();
    let mut value = objective.value(&alpha)?;
    if !value.is_finite() {
        return Err(EmError::numerical(
            "newton",
            "objective is not finite at the start",
        ));
    }
    for iteration in 0..max_iter {
        let gradient = objective.gradient(&alpha)?;
        let norm = gradient.norm();
        if norm < tol {
            return Ok(NewtonOutcome {
                alpha,
                converged: true,
                iterations: iteration,
                gradient_norm: norm,
            });
        }
        let direction = objective.solve_newton_system(&alpha, &(-&gradient))?;
        let slope = gradient.dot(&direction);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate = &alpha + &direction * step;
            if candidate.iter().any(|&a| a < ALPHA_FLOOR) {
                step *= 0.5;
                continue;
            }
            let candidate_value = objective.value(&candidate)?;
            if !candidate_value.is_finite() {
                return Err(EmError::numerical(
                    "newton",
                    format!("objective is not finite at iteration {iteration}"),
                ));
            }
            if candidate_value <= value + 1e-4 * step * slope {
                alpha = candidate;
                value = candidate_value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // The line search collapsed; report the best point found.
            return Ok(NewtonOutcome {
                alpha,
                converged: false,
                iterations: iteration,
                gradient_norm: norm,
            });
        }
    }
    let gradient_norm = objective.gradient(&alpha)?.norm();
    Ok(NewtonOutcome {
        alpha,
        converged: gradient_norm < tol,
        iterations: max_iter,
        gradient_norm,
    })
}
