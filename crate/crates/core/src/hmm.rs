//! Hidden Markov models with absorbing states: scaled forward-backward,
//! exact expected state usages, the inertia-penalized online EM update, and
//! the divergence between two chains.
//!
//! States `[0, s)` are transient and emit one observation per visit through
//! an exponential family; states `[s, k)` are absorbing, emit nothing, and
//! terminate the sequence.  A sequence `v_1..v_T` is scored as the
//! probability of emitting that prefix (absorbing states receive zero
//! emission probability inside the forward-backward pass), so every time sum
//! below runs over each sequence's own length.
//!
//! Because the chain is absorbing, the expected number of visits to each
//! transient state before absorption is the finite vector
//! `u^T = pi_trans^T (I - Q)^{-1}` (`Q` = transient-to-transient block).
//! These usages weight the transition and emission terms of
//! [`hmm_divergence`], giving the online update the same convex-combination
//! shape as the mixture case:
//!
//! ```text
//! pi~_h = (pi_h / eta + mean_n gamma^{n,1}_h) / (1/eta + 1)
//! a~_{h,h'} = (u_h a_{h,h'} / eta + mean_n sum_{t<T} pair^{n,t}_{h,h'})
//!             / (u_h / eta + mean_n sum_{t<T} gamma^{n,t}_h)
//! mu~_h = (u_h mu_h / eta + mean_n sum_t gamma^{n,t}_h phi(v_{n,t}))
//!         / (u_h / eta + mean_n sum_t gamma^{n,t}_h)
//! ```
//!
//! The transition denominator stops at `T-1` so that updated rows stay
//! exactly stochastic; the emission sums run over every emission.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{EmError, Result};
use crate::expfam::{bregman_divergence, ExpFamSpec, ExpectationParams, NaturalParams};
use crate::numeric::{is_probability_simplex, kl_simplex};

const STATE_DEATH_THRESHOLD: f64 = 1e-12;

/// An absorbing hidden Markov model with exponential-family emissions on the
/// transient states.
#[derive(Clone, Debug, PartialEq)]
pub struct HmmModel {
    spec: ExpFamSpec,
    initial: DVector<f64>,
    transitions: DMatrix<f64>,
    emissions: Vec<ExpectationParams>,
    transient_count: usize,
}

/// Exact posteriors for one observation sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct HmmPosteriors {
    /// `T x k`: `gamma^t_h = P(h_t = h | v)`.
    pub state_marginals: DMatrix<f64>,
    /// `T-1` matrices, entry `(h, h')`: `P(h_t = h, h_{t+1} = h' | v)`.
    pub pair_marginals: Vec<DMatrix<f64>>,
    /// Log of the sequence likelihood.
    pub log_likelihood: f64,
}

impl HmmModel {
    /// Validates all model invariants: simplex initial vector, row-stochastic
    /// transitions, identity rows for absorbing states, and an absorbing
    /// transient block (every transient state can reach an absorbing state,
    /// with a power-iteration estimate of the transient spectral radius
    /// strictly below one).
    pub fn new(
        spec: ExpFamSpec,
        initial: DVector<f64>,
        transitions: DMatrix<f64>,
        emissions: Vec<ExpectationParams>,
        transient_count: usize,
    ) -> Result<Self> {
        let k = initial.len();
        if transitions.nrows() != k || transitions.ncols() != k {
            return Err(EmError::invalid_argument(format!(
                "transition matrix is {}x{}, expected {k}x{k}",
                transitions.nrows(),
                transitions.ncols()
            )));
        }
        if transient_count == 0 || transient_count >= k {
            return Err(EmError::invalid_argument(format!(
                "transient_count must lie in [1, k-1]; got {transient_count} of {k} states"
            )));
        }
        if emissions.len() != transient_count {
            return Err(EmError::invalid_argument(format!(
                "{} emission parameters for {transient_count} transient states",
                emissions.len()
            )));
        }
        if !is_probability_simplex(initial.as_slice(), 1e-12) {
            return Err(EmError::invalid_parameter(
                "initial distribution must be nonnegative and sum to 1",
            ));
        }
        for h in 0..k {
            let row: Vec<f64> = transitions.row(h).iter().cloned().collect();
            if !is_probability_simplex(&row, 1e-12) {
                return Err(EmError::invalid_parameter(format!(
                    "transition row {h} must be nonnegative and sum to 1"
                )));
            }
        }
        for h in transient_count..k {
            for j in 0..k {
                let expected = if j == h { 1.0 } else { 0.0 };
                if (transitions[(h, j)] - expected).abs() > 1e-12 {
                    return Err(EmError::invalid_model(format!(
                        "absorbing state {h} must transition to itself with probability 1"
                    )));
                }
            }
        }
        for (h, mu) in emissions.iter().enumerate() {
            spec.check_expectation(mu)
                .map_err(|e| EmError::invalid_parameter(format!("emission {h}: {e}")))?;
        }

        // Every transient state must reach an absorbing state through the
        // support graph; this is the exact condition for the transient block
        // to have spectral radius < 1.
        let mut reaches = vec![false; transient_count];
        let mut changed = true;
        while changed {
            changed = false;
            for h in 0..transient_count {
                if reaches[h] {
                    continue;
                }
                for j in 0..k {
                    if transitions[(h, j)] > 0.0 && (j >= transient_count || reaches[j]) {
                        reaches[h] = true;
                        changed = true;
                        break;
                    }
                }
            }
        }
        if let Some(h) = reaches.iter().position(|r| !r) {
            return Err(EmError::invalid_model(format!(
                "transient state {h} cannot reach any absorbing state; the transient block is not substochastic in the limit"
            )));
        }
        let q = transitions.view((0, 0), (transient_count, transient_count));
        let radius = crate::linalg::spectral_radius(&q.clone_owned(), 300);
        if radius >= 1.0 {
            return Err(EmError::invalid_model(format!(
                "transient block spectral radius estimate {radius} is not strictly below 1"
            )));
        }

        Ok(HmmModel {
            spec,
            initial,
            transitions,
            emissions,
            transient_count,
        })
    }

    pub fn spec(&self) -> &ExpFamSpec {
        &self.spec
    }

    pub fn state_count(&self) -> usize {
        self.initial.len()
    }

    pub fn transient_count(&self) -> usize {
        self.transient_count
    }

    pub fn absorbing_count(&self) -> usize {
        self.state_count() - self.transient_count
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.initial
    }

    pub fn transitions(&self) -> &DMatrix<f64> {
        &self.transitions
    }

    pub fn emissions(&self) -> &[ExpectationParams] {
        &self.emissions
    }

    fn naturals(&self) -> Result<Vec<(NaturalParams, f64)>> {
        self.emissions
            .iter()
            .map(|mu| {
                let theta = self.spec.inverse_link(mu)?;
                let g = self.spec.log_partition(&theta)?;
                Ok((theta, g))
            })
            .collect()
    }

    /// Per-step log emission weights (`T x k`); absorbing states get `-inf`.
    fn log_emissions(&self, sequence: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        let naturals = self.naturals()?;
        let k = self.state_count();
        let mut out = DMatrix::from_element(sequence.len(), k, f64::NEG_INFINITY);
        for (t, v) in sequence.iter().enumerate() {
            let phi = self
                .spec
                .suff_stat(v)
                .map_err(|e| EmError::invalid_argument(format!("time {t}: {e}")))?;
            let base = self.spec.log_base_measure(v)?;
            for h in 0..self.transient_count {
                let (theta, g) = &naturals[h];
                let ld = theta.0.dot(&phi) - g + base;
                if ld.is_nan() {
                    return Err(EmError::numerical(
                        format!("time {t}"),
                        format!("non-finite emission log-density for state {h}"),
                    ));
                }
                out[(t, h)] = ld;
            }
        }
        Ok(out)
    }

    /// Scaled forward pass.  Returns per-step normalized forward variables,
    /// the per-step scaling constants `c_t`, the per-step max-shifts `m_t`,
    /// and the emission weights `w = exp(logb - m)`.
    fn forward(
        &self,
        log_emissions: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, Vec<f64>, Vec<f64>, DMatrix<f64>)> {
        let t_len = log_emissions.nrows();
        let k = self.state_count();
        let mut shifts = Vec::with_capacity(t_len);
        let mut weights = DMatrix::zeros(t_len, k);
        for t in 0..t_len {
            let m = log_emissions
                .row(t)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            shifts.push(m);
            for h in 0..k {
                weights[(t, h)] = (log_emissions[(t, h)] - m).exp();
            }
        }

        let mut alpha = DMatrix::zeros(t_len, k);
        let mut scales = Vec::with_capacity(t_len);
        for h in 0..k {
            alpha[(0, h)] = self.initial[h] * weights[(0, h)];
        }
        for t in 0..t_len {
            if t > 0 {
                for h_next in 0..k {
                    let mut acc = 0.0;
                    for h in 0..k {
                        acc += alpha[(t - 1, h)] * self.transitions[(h, h_next)];
                    }
                    alpha[(t, h_next)] = acc * weights[(t, h_next)];
                }
            }
            let c: f64 = alpha.row(t).iter().sum();
            if !(c > 0.0) || !c.is_finite() {
                return Err(EmError::numerical(
                    format!("time {t}"),
                    "zero forward mass: the model cannot produce this observation",
                ));
            }
            for h in 0..k {
                alpha[(t, h)] /= c;
            }
            scales.push(c);
        }
        Ok((alpha, scales, shifts, weights))
    }

    /// Exact posteriors for one sequence via the scaled forward-backward
    /// recursion; the log-likelihood is reconstructed from the scaling
    /// constants and max-shifts.
    pub fn forward_backward(&self, sequence: &[DVector<f64>]) -> Result<HmmPosteriors> {
        if sequence.is_empty() {
            return Err(EmError::invalid_argument("empty sequence"));
        }
        let log_emissions = self.log_emissions(sequence)?;
        let (alpha, scales, shifts, weights) = self.forward(&log_emissions)?;
        let t_len = sequence.len();
        let k = self.state_count();

        let mut beta = DMatrix::zeros(t_len, k);
        for h in 0..k {
            beta[(t_len - 1, h)] = 1.0;
        }
        for t in (0..t_len - 1).rev() {
            for h in 0..k {
                let mut acc = 0.0;
                for h_next in 0..k {
                    acc += self.transitions[(h, h_next)]
                        * weights[(t + 1, h_next)]
                        * beta[(t + 1, h_next)];
                }
                beta[(t, h)] = acc / scales[t + 1];
            }
        }

        let mut state_marginals = DMatrix::zeros(t_len, k);
        for t in 0..t_len {
            for h in 0..k {
                state_marginals[(t, h)] = alpha[(t, h)] * beta[(t, h)];
            }
        }
        let mut pair_marginals = Vec::with_capacity(t_len - 1);
        for t in 0..t_len - 1 {
            let mut pair = DMatrix::zeros(k, k);
            for h in 0..k {
                for h_next in 0..k {
                    pair[(h, h_next)] = alpha[(t, h)]
                        * self.transitions[(h, h_next)]
                        * weights[(t + 1, h_next)]
                        * beta[(t + 1, h_next)]
                        / scales[t + 1];
                }
            }
            pair_marginals.push(pair);
        }

        let log_likelihood =
            scales.iter().map(|c| c.ln()).sum::<f64>() + shifts.iter().sum::<f64>();
        Ok(HmmPosteriors {
            state_marginals,
            pair_marginals,
            log_likelihood,
        })
    }

    /// Expected number of visits to each transient state before absorption:
    /// `u^T = pi_trans^T (I - Q)^{-1}`.
    pub fn expected_usage(&self) -> Result<DVector<f64>> {
        let s = self.transient_count;
        let q = self.transitions.view((0, 0), (s, s)).clone_owned();
        let system = DMatrix::identity(s, s) - q.transpose();
        let pi_trans = self.initial.rows(0, s).clone_owned();
        let lu = system.lu();
        let mut u = lu.solve(&pi_trans).ok_or_else(|| {
            EmError::invalid_model("I - Q is singular; expected usages are not finite")
        })?;
        for h in 0..s {
            if !u[h].is_finite() || u[h] < -1e-12 {
                return Err(EmError::invalid_model(format!(
                    "expected usage of state {h} is {}, not a finite nonnegative number",
                    u[h]
                )));
            }
            u[h] = u[h].max(0.0);
        }
        Ok(u)
    }

    /// Mean negative log-likelihood per sequence (forward algorithm).
    pub fn nll(&self, sequences: &[Vec<DVector<f64>>]) -> Result<f64> {
        if sequences.is_empty() {
            return Err(EmError::invalid_argument("empty sequence set"));
        }
        let mut total = 0.0;
        for seq in sequences {
            if seq.is_empty() {
                return Err(EmError::invalid_argument("empty sequence"));
            }
            let log_emissions = self.log_emissions(seq)?;
            let (_, scales, shifts, _) = self.forward(&log_emissions)?;
            total -= scales.iter().map(|c| c.ln()).sum::<f64>() + shifts.iter().sum::<f64>();
        }
        Ok(total / sequences.len() as f64)
    }

    /// Mini-batch sufficient statistics, all averaged over the `N` sequences:
    /// first-step marginals, pair-marginal sums, head (`t <= T-1`) and full
    /// state-marginal sums, and gamma-weighted statistic sums.
    #[allow(clippy::type_complexity)]
    fn batch_statistics(
        &self,
        sequences: &[Vec<DVector<f64>>],
    ) -> Result<(
        DVector<f64>,
        DMatrix<f64>,
        DVector<f64>,
        DVector<f64>,
        Vec<DVector<f64>>,
    )> {
        if sequences.is_empty() {
            return Err(EmError::invalid_argument("empty sequence set"));
        }
        let k = self.state_count();
        let s = self.transient_count;
        let n = sequences.len() as f64;
        let mut gamma1 = DVector::zeros(k);
        let mut pair_sum = DMatrix::zeros(k, k);
        let mut gamma_head = DVector::zeros(s);
        let mut gamma_all = DVector::zeros(s);
        let mut stat_sum = vec![DVector::zeros(self.spec.dim_stat()); s];

        for seq in sequences {
            let post = self.forward_backward(seq)?;
            let t_len = seq.len();
            for h in 0..k {
                gamma1[h] += post.state_marginals[(0, h)] / n;
            }
            for pair in &post.pair_marginals {
                pair_sum += pair / n;
            }
            for t in 0..t_len {
                let phi = self.spec.suff_stat(&seq[t])?;
                for h in 0..s {
                    let g = post.state_marginals[(t, h)];
                    gamma_all[h] += g / n;
                    if t + 1 < t_len {
                        gamma_head[h] += g / n;
                    }
                    stat_sum[h].axpy(g / n, &phi, 1.0);
                }
            }
        }
        Ok((gamma1, pair_sum, gamma_head, gamma_all, stat_sum))
    }

    /// One online EM step with inertia strength `1/eta`.
    pub fn online_em_step(&self, sequences: &[Vec<DVector<f64>>], eta: f64) -> Result<HmmModel> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(EmError::invalid_argument(format!(
                "eta must be a positive finite number, got {eta}"
            )));
        }
        let usage = self.expected_usage()?;
        let (gamma1, pair_sum, gamma_head, gamma_all, stat_sum) =
            self.batch_statistics(sequences)?;
        let inv_eta = 1.0 / eta;
        let k = self.state_count();
        let s = self.transient_count;

        let mut initial = DVector::zeros(k);
        for h in 0..k {
            initial[h] = (self.initial[h] * inv_eta + gamma1[h]) / (inv_eta + 1.0);
        }

        let mut transitions = self.transitions.clone();
        for h in 0..s {
            let denom = usage[h] * inv_eta + gamma_head[h];
            if denom < STATE_DEATH_THRESHOLD {
                warn!("transient state {h} received no transition mass; leaving its row unchanged");
                continue;
            }
            for j in 0..k {
                transitions[(h, j)] =
                    (usage[h] * self.transitions[(h, j)] * inv_eta + pair_sum[(h, j)]) / denom;
            }
        }

        let mut emissions = Vec::with_capacity(s);
        for h in 0..s {
            let denom = usage[h] * inv_eta + gamma_all[h];
            if denom < STATE_DEATH_THRESHOLD {
                warn!("transient state {h} received no emission mass; leaving it unchanged");
                emissions.push(self.emissions[h].clone());
                continue;
            }
            let numer = &self.emissions[h].0 * (usage[h] * inv_eta) + &stat_sum[h];
            emissions.push(
                self.spec
                    .floor_expectation(ExpectationParams(numer / denom)),
            );
        }

        HmmModel::new(self.spec.clone(), initial, transitions, emissions, s)
    }

    /// Draws observation sequences: run the chain from `pi`, emit once per
    /// transient visit, stop on absorption or after `max_len` emissions.
    /// Sequences that start absorbed are empty.
    pub fn sample_sequences<R: Rng + ?Sized>(
        &self,
        count: usize,
        rng: &mut R,
        max_len: usize,
    ) -> Result<Vec<Vec<DVector<f64>>>> {
        if max_len == 0 {
            return Err(EmError::invalid_argument("max_len must be at least 1"));
        }
        let naturals = self.naturals()?;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut seq = Vec::new();
            let mut state = crate::mixture::sample_categorical(&self.initial, rng);
            while state < self.transient_count && seq.len() < max_len {
                seq.push(self.spec.sample(&naturals[state].0, rng)?);
                let row = self.transitions.row(state).transpose();
                state = crate::mixture::sample_categorical(&row, rng);
            }
            out.push(seq);
        }
        Ok(out)
    }
}

/// Relative entropy between the complete-data distributions of two aligned
/// absorbing HMMs (trajectories run until absorption):
///
/// ```text
/// sum_h pi_h ln(pi_h/pi~_h) + sum_h u_h sum_h' a_{h,h'} ln(a_{h,h'}/a~_{h,h'})
///   + sum_h u_h D_G(theta~_h, theta_h)
/// ```
///
/// with usages `u` taken from `model_a` and transition/emission sums over
/// transient states only.  A support mismatch yields `+inf`.
pub fn hmm_divergence(model_a: &HmmModel, model_b: &HmmModel) -> Result<f64> {
    if model_a.spec != model_b.spec
        || model_a.state_count() != model_b.state_count()
        || model_a.transient_count != model_b.transient_count
    {
        return Err(EmError::invalid_argument(
            "hmm divergence requires models of identical shape",
        ));
    }
    let usage = model_a.expected_usage()?;
    let mut total = kl_simplex(model_a.initial.as_slice(), model_b.initial.as_slice());
    for h in 0..model_a.transient_count {
        if usage[h] == 0.0 {
            continue;
        }
        let row_a: Vec<f64> = model_a.transitions.row(h).iter().cloned().collect();
        let row_b: Vec<f64> = model_b.transitions.row(h).iter().cloned().collect();
        total += usage[h] * kl_simplex(&row_a, &row_b);
        let theta_a = model_a.spec.inverse_link(&model_a.emissions[h])?;
        let theta_b = model_b.spec.inverse_link(&model_b.emissions[h])?;
        total += usage[h] * bregman_divergence(&model_a.spec, &theta_b, &theta_a)?;
        if total.is_infinite() {
            return Ok(f64::INFINITY);
        }
    }
    Ok(total)
}
