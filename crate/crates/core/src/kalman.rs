//! Linear-Gaussian state-space models: Kalman filtering and RTS smoothing,
//! the prior second-moment recursion, the log-determinant divergence, and
//! the inertia-penalized online EM update for all six parameters.
//!
//! The model is `h_{t+1} = A h_t + rho_t`, `v_t = C h_t + eps_t` with
//! `rho ~ N(0, Qn)`, `eps ~ N(0, Rn)` and `h_1 ~ N(pi1, V)`.  The joint
//! relative entropy between two models over `(h_{1:T}, v_{1:T})` is
//!
//! ```text
//! 2 D(Theta, Theta~) = (pi1 - pi1~)' V~^{-1} (pi1 - pi1~) + D_ld(V, V~)
//!   + tr(Q~^{-1} (A - A~) sum_{t=1}^{T-1} U_t (A - A~)') + (T-1) D_ld(Q, Q~)
//!   + tr(R~^{-1} (C - C~) sum_{t=1}^{T}   U_t (C - C~)') +  T    D_ld(R, R~)
//! ```
//!
//! where `U_1 = V + pi1 pi1'`, `U_{t+1} = Qn + A U_t A'` are the prior
//! second moments and `D_ld` the log-determinant divergence.  Adding this
//! penalty (scaled by `1/eta`) to the EM upper bound keeps every update in
//! closed form; each one blends the old parameter with the batch M-step
//! statistic, and updates are applied in the order `A~, C~` then `Q~, R~`
//! then `pi1~` then `V~` so that later statistics see the new values.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{EmError, Result};
use crate::linalg::{log_det, min_symmetric_eigenvalue, spd_cholesky, symmetrize};

/// Minimum eigenvalue required of the covariance parameters.
pub const COVARIANCE_MIN_EIGENVALUE: f64 = 1e-10;

/// Eigenvalue slack allowed when validating smoothed posterior covariances.
const POSTERIOR_PSD_SLACK: f64 = -1e-8;

/// Parameters of a linear-Gaussian state-space model.
#[derive(Clone, Debug, PartialEq)]
pub struct KalmanModel {
    pi1: DVector<f64>,
    v: DMatrix<f64>,
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    qn: DMatrix<f64>,
    rn: DMatrix<f64>,
}

/// Smoothed posterior moments of the hidden states for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothedMoments {
    /// `h_hat[t] = E[h_{t+1} | v]` (0-indexed storage).
    pub h_hat: Vec<DVector<f64>>,
    /// `p[t] = E[h_{t+1} h_{t+1}' | v]` — full second moments.
    pub p: Vec<DMatrix<f64>>,
    /// `p_pair[t] = E[h_{t+2} h_{t+1}' | v]` — cross moments, length `T-1`.
    pub p_pair: Vec<DMatrix<f64>>,
}

/// Prior second moments `U_t = E[h_t h_t']` under the model.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorMoments {
    pub u: Vec<DMatrix<f64>>,
}

/// Selects which parameters an online EM step may change; masked-off
/// parameters are passed through unchanged (their inertia terms drop out).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UpdateMask {
    pub pi1: bool,
    pub v: bool,
    pub a: bool,
    pub c: bool,
    pub qn: bool,
    pub rn: bool,
}

impl UpdateMask {
    pub fn all() -> Self {
        UpdateMask {
            pi1: true,
            v: true,
            a: true,
            c: true,
            qn: true,
            rn: true,
        }
    }

    /// Everything except the noise covariances, for the known-noise setting.
    pub fn known_noise() -> Self {
        UpdateMask {
            qn: false,
            rn: false,
            ..UpdateMask::all()
        }
    }
}

impl Default for UpdateMask {
    fn default() -> Self {
        UpdateMask::all()
    }
}

fn validated_covariance(m: &DMatrix<f64>, dim: usize, what: &str) -> Result<DMatrix<f64>> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(EmError::invalid_argument(format!(
            "{what} is {}x{}, expected {dim}x{dim}",
            m.nrows(),
            m.ncols()
        )));
    }
    let sym = symmetrize(m);
    let min_eig = min_symmetric_eigenvalue(&sym);
    if !(min_eig > COVARIANCE_MIN_EIGENVALUE) {
        return Err(EmError::invalid_parameter(format!(
            "{what} must be positive definite; minimum eigenvalue {min_eig} after symmetrization"
        )));
    }
    Ok(sym)
}

impl KalmanModel {
    /// Validates dimensions and requires `V`, `Qn`, `Rn` to be symmetric
    /// positive definite; covariances are symmetrized on the way in.
    pub fn new(
        pi1: DVector<f64>,
        v: DMatrix<f64>,
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        qn: DMatrix<f64>,
        rn: DMatrix<f64>,
    ) -> Result<Self> {
        let n = pi1.len();
        let d = c.nrows();
        if n == 0 || d == 0 {
            return Err(EmError::invalid_argument(
                "state and observation dimensions must be at least 1",
            ));
        }
        if a.nrows() != n || a.ncols() != n {
            return Err(EmError::invalid_argument(format!(
                "A is {}x{}, expected {n}x{n}",
                a.nrows(),
                a.ncols()
            )));
        }
        if c.ncols() != n {
            return Err(EmError::invalid_argument(format!(
                "C is {}x{}, expected {d}x{n}",
                c.nrows(),
                c.ncols()
            )));
        }
        if let Some(x) = pi1
            .iter()
            .chain(a.iter())
            .chain(c.iter())
            .find(|x| !x.is_finite())
        {
            return Err(EmError::invalid_parameter(format!(
                "model parameters must be finite, found {x}"
            )));
        }
        let v = validated_covariance(&v, n, "V")?;
        let qn = validated_covariance(&qn, n, "Qn")?;
        let rn = validated_covariance(&rn, d, "Rn")?;
        Ok(KalmanModel {
            pi1,
            v,
            a,
            c,
            qn,
            rn,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.pi1.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn pi1(&self) -> &DVector<f64> {
        &self.pi1
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn qn(&self) -> &DMatrix<f64> {
        &self.qn
    }

    pub fn rn(&self) -> &DMatrix<f64> {
        &self.rn
    }

    /// Prior second moments `U_1..U_horizon`.
    pub fn prior_moments(&self, horizon: usize) -> PriorMoments {
        let mut u = Vec::with_capacity(horizon);
        if horizon == 0 {
            return PriorMoments { u };
        }
        let mut current = &self.v + &self.pi1 * self.pi1.transpose();
        for _ in 0..horizon {
            u.push(current.clone());
            current = symmetrize(&(&self.qn + &self.a * &current * self.a.transpose()));
        }
        PriorMoments { u }
    }

    fn check_sequence(&self, sequence: &[DVector<f64>]) -> Result<()> {
        if sequence.is_empty() {
            return Err(EmError::invalid_argument("empty observation sequence"));
        }
        for (t, v) in sequence.iter().enumerate() {
            if v.len() != self.obs_dim() {
                return Err(EmError::invalid_argument(format!(
                    "observation at time {t} has dimension {}, expected {}",
                    v.len(),
                    self.obs_dim()
                )));
            }
            if let Some(x) = v.iter().find(|x| !x.is_finite()) {
                return Err(EmError::invalid_argument(format!(
                    "observation at time {t} contains non-finite value {x}"
                )));
            }
        }
        Ok(())
    }

    /// Forward filter pass.  Returns filtered means/covariances, one-step
    /// predicted means/covariances, and the log-likelihood from the
    /// innovation decomposition.
    #[allow(clippy::type_complexity)]
    fn filter(
        &self,
        sequence: &[DVector<f64>],
    ) -> Result<(
        Vec<DVector<f64>>,
        Vec<DMatrix<f64>>,
        Vec<DVector<f64>>,
        Vec<DMatrix<f64>>,
        f64,
    )> {
        self.check_sequence(sequence)?;
        let n = self.state_dim();
        let d = self.obs_dim();
        let t_len = sequence.len();
        let identity = DMatrix::<f64>::identity(n, n);
        let ln_two_pi = std::f64::consts::TAU.ln();

        let mut means = Vec::with_capacity(t_len);
        let mut covs = Vec::with_capacity(t_len);
        let mut pred_means = Vec::with_capacity(t_len);
        let mut pred_covs = Vec::with_capacity(t_len);
        let mut log_likelihood = 0.0;

        for (t, v) in sequence.iter().enumerate() {
            let (x_pred, p_pred) = if t == 0 {
                (self.pi1.clone(), self.v.clone())
            } else {
                let x: &DVector<f64> = &means[t - 1];
                let p: &DMatrix<f64> = &covs[t - 1];
                (
                    &self.a * x,
                    symmetrize(&(&self.a * p * self.a.transpose() + &self.qn)),
                )
            };
            let innovation_cov = symmetrize(&(&self.c * &p_pred * self.c.transpose() + &self.rn));
            let chol = spd_cholesky(&innovation_cov, "innovation covariance")
                .map_err(|e| EmError::numerical(format!("filter time {t}"), e.to_string()))?;
            let residual = v - &self.c * &x_pred;
            let solved = chol.solve(&residual);
            log_likelihood -= 0.5 * (d as f64 * ln_two_pi + log_det(&chol) + residual.dot(&solved));

            // Gain K = P C' S^{-1}; Joseph-form covariance update keeps the
            // result symmetric PSD even when the noise is tiny.
            let gain = chol.solve(&(&self.c * &p_pred)).transpose();
            let x_new = &x_pred + &gain * residual;
            let shrink = &identity - &gain * &self.c;
            let p_new = symmetrize(
                &(&shrink * &p_pred * shrink.transpose() + &gain * &self.rn * gain.transpose()),
            );
            means.push(x_new);
            covs.push(p_new);
            pred_means.push(x_pred);
            pred_covs.push(p_pred);
        }
        Ok((means, covs, pred_means, pred_covs, log_likelihood))
    }

    /// Kalman smoother (RTS pass).  Returns the posterior moments
    /// `h_hat_t`, `P_t = E[h_t h_t'|v]`, and `P_{t,t-1} = E[h_t h_{t-1}'|v]`.
    pub fn smooth(&self, sequence: &[DVector<f64>]) -> Result<SmoothedMoments> {
        let (means, covs, pred_means, pred_covs, _) = self.filter(sequence)?;
        let t_len = sequence.len();

        let mut smoothed_means = means.clone();
        let mut smoothed_covs = covs.clone();
        let mut gains: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); t_len];
        for t in (0..t_len - 1).rev() {
            let chol = spd_cholesky(&pred_covs[t + 1], "predicted covariance")
                .map_err(|e| EmError::numerical(format!("smoother time {t}"), e.to_string()))?;
            // J_t = P_t A' (P_{t+1}^-)^{-1}
            let gain = chol.solve(&(&self.a * &covs[t])).transpose();
            smoothed_means[t] = &means[t] + &gain * (&smoothed_means[t + 1] - &pred_means[t + 1]);
            smoothed_covs[t] = symmetrize(
                &(&covs[t]
                    + &gain * (&smoothed_covs[t + 1] - &pred_covs[t + 1]) * gain.transpose()),
            );
            gains[t] = gain;
        }

        let mut h_hat = Vec::with_capacity(t_len);
        let mut p = Vec::with_capacity(t_len);
        let mut p_pair = Vec::with_capacity(t_len.saturating_sub(1));
        for t in 0..t_len {
            let min_eig = min_symmetric_eigenvalue(&smoothed_covs[t]);
            if min_eig < POSTERIOR_PSD_SLACK {
                return Err(EmError::numerical(
                    format!("smoother time {t}"),
                    format!("posterior covariance has eigenvalue {min_eig}"),
                ));
            }
            p.push(&smoothed_covs[t] + &smoothed_means[t] * smoothed_means[t].transpose());
            h_hat.push(smoothed_means[t].clone());
        }
        for t in 1..t_len {
            // Cov(h_t, h_{t-1} | v) = P^s_t J_{t-1}'
            let cross = &smoothed_covs[t] * gains[t - 1].transpose();
            p_pair.push(cross + &smoothed_means[t] * smoothed_means[t - 1].transpose());
        }
        Ok(SmoothedMoments { h_hat, p, p_pair })
    }

    /// Mean negative log marginal likelihood per sequence, via the filter's
    /// innovation decomposition.
    pub fn nll(&self, sequences: &[Vec<DVector<f64>>]) -> Result<f64> {
        if sequences.is_empty() {
            return Err(EmError::invalid_argument("empty sequence set"));
        }
        let mut total = 0.0;
        for seq in sequences {
            total -= self.filter(seq)?.4;
        }
        Ok(total / sequences.len() as f64)
    }

    /// One online EM step with inertia strength `1/eta`.  All sequences must
    /// share a common length `T >= 2`; parameters deselected by `mask` pass
    /// through unchanged.
    pub fn online_em_step(
        &self,
        sequences: &[Vec<DVector<f64>>],
        eta: f64,
        mask: &UpdateMask,
    ) -> Result<KalmanModel> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(EmError::invalid_argument(format!(
                "eta must be a positive finite number, got {eta}"
            )));
        }
        if sequences.is_empty() {
            return Err(EmError::invalid_argument("empty sequence set"));
        }
        let t_len = sequences[0].len();
        if t_len < 2 {
            return Err(EmError::invalid_argument(
                "online EM requires sequences of length at least 2",
            ));
        }
        if let Some(bad) = sequences.iter().find(|s| s.len() != t_len) {
            return Err(EmError::invalid_argument(format!(
                "all sequences must share one length; found {} and {t_len}",
                bad.len()
            )));
        }
        let n = self.state_dim();
        let d = self.obs_dim();
        let big_n = sequences.len() as f64;
        let inv_eta = 1.0 / eta;

        // Batch-averaged smoothed statistics.
        let mut h1_mean = DVector::<f64>::zeros(n);
        let mut p1_mean = DMatrix::<f64>::zeros(n, n);
        let mut pair_sum = DMatrix::<f64>::zeros(n, n); // sum_{t=2}^T P_{t,t-1}
        let mut p_head = DMatrix::<f64>::zeros(n, n); // sum_{t=1}^{T-1} P_t
        let mut p_tail = DMatrix::<f64>::zeros(n, n); // sum_{t=2}^{T} P_t
        let mut vh_sum = DMatrix::<f64>::zeros(d, n); // sum_{t=1}^T v_t h_hat_t'
        let mut vv_sum = DMatrix::<f64>::zeros(d, d); // sum_{t=1}^T v_t v_t'
        for seq in sequences {
            let moments = self.smooth(seq)?;
            h1_mean += &moments.h_hat[0] / big_n;
            p1_mean += &moments.p[0] / big_n;
            for t in 0..t_len {
                if t + 1 < t_len {
                    p_head += &moments.p[t] / big_n;
                }
                if t > 0 {
                    p_tail += &moments.p[t] / big_n;
                    pair_sum += &moments.p_pair[t - 1] / big_n;
                }
                vh_sum += &seq[t] * moments.h_hat[t].transpose() / big_n;
                vv_sum += &seq[t] * seq[t].transpose() / big_n;
            }
        }
        // sum_{t=1}^T P_t = P_1 + sum_{t=2}^T P_t.
        let p_all = &p1_mean + &p_tail;

        let prior = self.prior_moments(t_len);
        let mut u_head = DMatrix::<f64>::zeros(n, n);
        for t in 0..t_len - 1 {
            u_head += &prior.u[t];
        }
        let u_all = &u_head + &prior.u[t_len - 1];

        // First-order parameters.
        let a_new = if mask.a {
            let numerator = &self.a * &u_head * inv_eta + &pair_sum;
            let s_head = symmetrize(&(&u_head * inv_eta + &p_head));
            let chol = spd_cholesky(&s_head, "S_{T-1}")
                .map_err(|e| EmError::numerical("A update", e.to_string()))?;
            chol.solve(&numerator.transpose()).transpose()
        } else {
            self.a.clone()
        };
        let c_new = if mask.c {
            let numerator = &self.c * &u_all * inv_eta + &vh_sum;
            let s_all = symmetrize(&(&u_all * inv_eta + &p_all));
            let chol = spd_cholesky(&s_all, "S_T")
                .map_err(|e| EmError::numerical("C update", e.to_string()))?;
            chol.solve(&numerator.transpose()).transpose()
        } else {
            self.c.clone()
        };

        // Noise covariances, built from the new first-order parameters.
        let qn_new = if mask.qn {
            let q_hat = (&p_tail - &a_new * pair_sum.transpose() - &pair_sum * a_new.transpose()
                + &a_new * &p_head * a_new.transpose())
                / (t_len as f64 - 1.0);
            let a_diff = &self.a - &a_new;
            let delta_a = &a_diff * &u_head * a_diff.transpose() / (t_len as f64 - 1.0);
            let blended = ((&self.qn + delta_a) * inv_eta + q_hat) / (inv_eta + 1.0);
            finalize_covariance(blended, "Qn update")?
        } else {
            self.qn.clone()
        };
        let rn_new = if mask.rn {
            let r_hat = (&vv_sum - &c_new * vh_sum.transpose() - &vh_sum * c_new.transpose()
                + &c_new * &p_all * c_new.transpose())
                / t_len as f64;
            let c_diff = &self.c - &c_new;
            let delta_c = &c_diff * &u_all * c_diff.transpose() / t_len as f64;
            let blended = ((&self.rn + delta_c) * inv_eta + r_hat) / (inv_eta + 1.0);
            finalize_covariance(blended, "Rn update")?
        } else {
            self.rn.clone()
        };

        // Initial-state parameters.
        let pi1_new = if mask.pi1 {
            (&self.pi1 * inv_eta + &h1_mean) / (inv_eta + 1.0)
        } else {
            self.pi1.clone()
        };
        let v_new = if mask.v {
            let v_hat = &p1_mean - &pi1_new * h1_mean.transpose() - &h1_mean * pi1_new.transpose()
                + &pi1_new * pi1_new.transpose();
            let pi_diff = &self.pi1 - &pi1_new;
            let blended =
                ((&self.v + &pi_diff * pi_diff.transpose()) * inv_eta + v_hat) / (inv_eta + 1.0);
            finalize_covariance(blended, "V update")?
        } else {
            self.v.clone()
        };

        KalmanModel::new(pi1_new, v_new, a_new, c_new, qn_new, rn_new)
    }

    /// Ancestral sampling of `count` observation sequences of length `t_len`.
    pub fn sample_sequences<R: Rng + ?Sized>(
        &self,
        count: usize,
        t_len: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<DVector<f64>>>> {
        if t_len == 0 {
            return Err(EmError::invalid_argument("t_len must be at least 1"));
        }
        let n = self.state_dim();
        let d = self.obs_dim();
        let l_v = spd_cholesky(&self.v, "V")?.l().clone_owned();
        let l_q = spd_cholesky(&self.qn, "Qn")?.l().clone_owned();
        let l_r = spd_cholesky(&self.rn, "Rn")?.l().clone_owned();
        let draw = |rng: &mut R, len: usize| {
            DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
        };
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut seq = Vec::with_capacity(t_len);
            let mut h = &self.pi1 + &l_v * draw(rng, n);
            for t in 0..t_len {
                if t > 0 {
                    h = &self.a * &h + &l_q * draw(rng, n);
                }
                seq.push(&self.c * &h + &l_r * draw(rng, d));
            }
            out.push(seq);
        }
        Ok(out)
    }
}

fn finalize_covariance(blended: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = symmetrize(&blended);
    let min_eig = min_symmetric_eigenvalue(&sym);
    if !(min_eig > COVARIANCE_MIN_EIGENVALUE) {
        return Err(EmError::numerical(
            what,
            format!("updated covariance has minimum eigenvalue {min_eig}"),
        ));
    }
    Ok(sym)
}

/// Log-determinant divergence `D_ld(X, Y) = tr(X Y^{-1}) - ln|X Y^{-1}| - d`
/// between SPD matrices of equal dimension.
pub fn log_det_divergence(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    if x.nrows() != y.nrows() || x.ncols() != y.ncols() {
        return Err(EmError::invalid_argument(format!(
            "dimension mismatch: {}x{} vs {}x{}",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    let chol_x =
        spd_cholesky(&symmetrize(x), "X").map_err(|e| EmError::invalid_argument(e.to_string()))?;
    let chol_y =
        spd_cholesky(&symmetrize(y), "Y").map_err(|e| EmError::invalid_argument(e.to_string()))?;
    let trace = chol_y.solve(x).trace();
    let value = trace - (log_det(&chol_x) - log_det(&chol_y)) - x.nrows() as f64;
    Ok(value.max(0.0))
}

/// Relative entropy between the joint distributions of two models over
/// `(h_{1:T}, v_{1:T})`, using `model_a`'s prior moments.
pub fn kalman_divergence(
    model_a: &KalmanModel,
    model_b: &KalmanModel,
    t_len: usize,
) -> Result<f64> {
    if model_a.state_dim() != model_b.state_dim() || model_a.obs_dim() != model_b.obs_dim() {
        return Err(EmError::invalid_argument(
            "kalman divergence requires models of identical dimensions",
        ));
    }
    if t_len == 0 {
        return Err(EmError::invalid_argument("T must be at least 1"));
    }
    let n = model_a.state_dim();
    let prior = model_a.prior_moments(t_len);
    let mut u_head = DMatrix::<f64>::zeros(n, n);
    for t in 0..t_len - 1 {
        u_head += &prior.u[t];
    }
    let u_all = &u_head + &prior.u[t_len - 1];

    let chol_vb = spd_cholesky(&model_b.v, "V~")?;
    let pi_diff = &model_a.pi1 - &model_b.pi1;
    let mut total = pi_diff.dot(&chol_vb.solve(&pi_diff));
    total += log_det_divergence(&model_a.v, &model_b.v)?;

    if t_len > 1 {
        let chol_qb = spd_cholesky(&model_b.qn, "Q~")?;
        let a_diff = &model_a.a - &model_b.a;
        total += chol_qb
            .solve(&(&a_diff * &u_head * a_diff.transpose()))
            .trace();
        total += (t_len as f64 - 1.0) * log_det_divergence(&model_a.qn, &model_b.qn)?;
    }

    let chol_rb = spd_cholesky(&model_b.rn, "R~")?;
    let c_diff = &model_a.c - &model_b.c;
    total += chol_rb
        .solve(&(&c_diff * &u_all * c_diff.transpose()))
        .trace();
    total += t_len as f64 * log_det_divergence(&model_a.rn, &model_b.rn)?;

    Ok(0.5 * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use em_oracles as oracles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dv(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn dm(rows: usize, cols: usize, xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, xs)
    }

    /// A well-conditioned 2-state, 2-observation model.
    fn standard_model() -> KalmanModel {
        KalmanModel::new(
            dv(&[0.5, -1.0]),
            dm(2, 2, &[1.0, 0.3, 0.3, 0.8]),
            dm(2, 2, &[0.9, 0.1, -0.2, 0.7]),
            dm(2, 2, &[1.0, 0.5, -0.3, 1.2]),
            dm(2, 2, &[0.4, 0.1, 0.1, 0.5]),
            dm(2, 2, &[0.6, -0.2, -0.2, 0.9]),
        )
        .unwrap()
    }

    fn scalar_model(pi: f64, v: f64, a: f64, c: f64, q: f64, r: f64) -> KalmanModel {
        KalmanModel::new(
            dv(&[pi]),
            dm(1, 1, &[v]),
            dm(1, 1, &[a]),
            dm(1, 1, &[c]),
            dm(1, 1, &[q]),
            dm(1, 1, &[r]),
        )
        .unwrap()
    }

    #[test]
    fn near_noiseless_observations_pin_the_states() {
        let model = KalmanModel::new(
            dv(&[0.0, 0.0]),
            DMatrix::identity(2, 2),
            dm(2, 2, &[0.9, 0.0, 0.0, 0.9]),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2) * 0.5,
            DMatrix::identity(2, 2) * 1e-9,
        )
        .unwrap();
        let sequence = vec![dv(&[1.0, -2.0]), dv(&[0.5, 0.25]), dv(&[-1.5, 3.0])];
        let moments = model.smooth(&sequence).unwrap();
        for (t, v) in sequence.iter().enumerate() {
            assert!(
                (&moments.h_hat[t] - v).amax() < 1e-4,
                "time {t}: smoothed mean {} far from observation {v}",
                moments.h_hat[t]
            );
        }
    }

    #[test]
    fn single_step_matches_gaussian_conditioning() {
        let model = standard_model();
        let v_obs = dv(&[0.7, -0.4]);
        let moments = model.smooth(&[v_obs.clone()]).unwrap();

        // Posterior of h | v for the linear-Gaussian pair by hand.
        let s = model.c() * model.v() * model.c().transpose() + model.rn();
        let s_inv = s.try_inverse().unwrap();
        let gain = model.v() * model.c().transpose() * s_inv;
        let mean = model.pi1() + &gain * (&v_obs - model.c() * model.pi1());
        let cov = model.v() - &gain * model.c() * model.v();
        assert!((&moments.h_hat[0] - &mean).amax() < 1e-10);
        let cov_from_moments = &moments.p[0] - &mean * mean.transpose();
        assert!((&cov_from_moments - &cov).amax() < 1e-10);
    }

    #[test]
    fn smoother_matches_joint_gaussian_oracle() {
        let model = standard_model();
        let sequence = vec![
            dv(&[0.3, -0.1]),
            dv(&[1.2, 0.4]),
            dv(&[-0.5, 0.9]),
            dv(&[0.8, -1.3]),
        ];
        let moments = model.smooth(&sequence).unwrap();
        let oracle = oracles::joint_gaussian_smoother(
            model.pi1(),
            model.v(),
            model.a(),
            model.c(),
            model.qn(),
            model.rn(),
            &sequence,
        );
        for t in 0..4 {
            assert!(
                (&moments.h_hat[t] - &oracle.means[t]).amax() < 1e-8,
                "mean mismatch at t={t}"
            );
            let p_ref = &oracle.covariances[t] + &oracle.means[t] * oracle.means[t].transpose();
            assert!(
                (&moments.p[t] - &p_ref).amax() < 1e-8,
                "P mismatch at t={t}"
            );
        }
        for t in 0..3 {
            // oracle cross_covariances[t] = Cov(h_{t+2}, h_{t+1} | v).
            let pair_ref =
                &oracle.cross_covariances[t] + &oracle.means[t + 1] * oracle.means[t].transpose();
            assert!(
                (&moments.p_pair[t] - &pair_ref).amax() < 1e-8,
                "P_pair mismatch at t={t}"
            );
        }
        let nll = model.nll(&[sequence]).unwrap();
        assert_relative_eq!(nll, -oracle.log_likelihood, epsilon = 1e-8);
    }

    #[test]
    fn nll_degenerate_dynamics_reduces_to_noise_density() {
        // A = 0 and C = 0: every observation is N(0, Rn).
        let model = KalmanModel::new(
            dv(&[0.3]),
            dm(1, 1, &[0.9]),
            dm(1, 1, &[0.0]),
            dm(1, 1, &[0.0]),
            dm(1, 1, &[0.4]),
            dm(1, 1, &[1.7]),
        )
        .unwrap();
        let observations = [0.3, -0.9, 2.1];
        let sequence: Vec<_> = observations.iter().map(|&x| dv(&[x])).collect();
        let expected: f64 = observations
            .iter()
            .map(|&x| 0.5 * (std::f64::consts::TAU.ln() + 1.7f64.ln() + x * x / 1.7))
            .sum();
        assert_relative_eq!(model.nll(&[sequence]).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn nll_is_order_invariant() {
        let model = standard_model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seqs = model.sample_sequences(3, 4, &mut rng).unwrap();
        let reordered = vec![seqs[2].clone(), seqs[0].clone(), seqs[1].clone()];
        assert_relative_eq!(
            model.nll(&seqs).unwrap(),
            model.nll(&reordered).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn log_det_divergence_hand_values() {
        let x = dm(2, 2, &[1.3, 0.2, 0.2, 0.9]);
        assert_relative_eq!(log_det_divergence(&x, &x).unwrap(), 0.0, epsilon = 1e-12);
        for d in 1..4 {
            let two = DMatrix::<f64>::identity(d, d) * 2.0;
            let one = DMatrix::<f64>::identity(d, d);
            assert_relative_eq!(
                log_det_divergence(&two, &one).unwrap(),
                d as f64 * (1.0 - 2f64.ln()),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn log_det_divergence_nonnegative_and_asymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let random_spd = |rng: &mut ChaCha8Rng| {
            use rand::Rng;
            let f = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            &f * f.transpose() + DMatrix::identity(2, 2) * 0.3
        };
        for _ in 0..50 {
            let x = random_spd(&mut rng);
            let y = random_spd(&mut rng);
            let forward = log_det_divergence(&x, &y).unwrap();
            let backward = log_det_divergence(&y, &x).unwrap();
            assert!(forward >= 0.0);
            assert!(backward >= 0.0);
            if (&x - &y).amax() > 1e-6 {
                assert!(forward > 0.0);
            }
            // Asymmetry in general (not for every pair, but these random
            // pairs are never symmetric cases).
            assert!((forward - backward).abs() > 1e-12 || (&x - &y).amax() < 1e-9);
        }
        assert!(log_det_divergence(&dm(1, 1, &[-1.0]), &dm(1, 1, &[1.0])).is_err());
    }

    #[test]
    fn divergence_identical_models_is_zero() {
        let model = standard_model();
        assert_relative_eq!(
            kalman_divergence(&model, &model, 5).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn divergence_r_only_difference() {
        let a = standard_model();
        let mut rn = a.rn().clone();
        rn[(0, 0)] = 1.1;
        let b = KalmanModel::new(
            a.pi1().clone(),
            a.v().clone(),
            a.a().clone(),
            a.c().clone(),
            a.qn().clone(),
            rn.clone(),
        )
        .unwrap();
        for t_len in [1usize, 3, 7] {
            assert_relative_eq!(
                kalman_divergence(&a, &b, t_len).unwrap(),
                0.5 * t_len as f64 * log_det_divergence(a.rn(), &rn).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn divergence_matches_monte_carlo_joint_relative_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = scalar_model(0.4, 0.8, 0.7, 1.1, 0.5, 0.6);
        let b = scalar_model(0.1, 1.1, 0.5, 0.9, 0.7, 0.8);
        let t_len = 3;
        let ln_norm = |x: f64, mean: f64, var: f64| {
            -0.5 * (std::f64::consts::TAU.ln() + var.ln() + (x - mean) * (x - mean) / var)
        };
        let trajectories = 100_000;
        let mut ratios = Vec::with_capacity(trajectories);
        for _ in 0..trajectories {
            use rand::Rng;
            let mut log_ratio = 0.0;
            let mut h = 0.4 + 0.8f64.sqrt() * rng.sample::<f64, _>(StandardNormal);
            log_ratio += ln_norm(h, 0.4, 0.8) - ln_norm(h, 0.1, 1.1);
            for t in 0..t_len {
                if t > 0 {
                    let h_new = 0.7 * h + 0.5f64.sqrt() * rng.sample::<f64, _>(StandardNormal);
                    log_ratio += ln_norm(h_new, 0.7 * h, 0.5) - ln_norm(h_new, 0.5 * h, 0.7);
                    h = h_new;
                }
                let v = 1.1 * h + 0.6f64.sqrt() * rng.sample::<f64, _>(StandardNormal);
                log_ratio += ln_norm(v, 1.1 * h, 0.6) - ln_norm(v, 0.9 * h, 0.8);
            }
            ratios.push(log_ratio);
        }
        let (mc, stderr) = oracles::mean_and_stderr(&ratios);
        let exact = kalman_divergence(&a, &b, t_len).unwrap();
        assert!(
            (mc - exact).abs() <= 3.0 * stderr,
            "divergence {exact} vs Monte Carlo {mc} +- {stderr}"
        );
    }

    /// Classical EM M-step for linear dynamical systems, computed directly
    /// from the smoothed moments; the eta -> inf reference.
    fn classical_m_step(model: &KalmanModel, sequences: &[Vec<DVector<f64>>]) -> KalmanModel {
        let n = model.state_dim();
        let d = model.obs_dim();
        let t_len = sequences[0].len();
        let big_n = sequences.len() as f64;
        let mut h1 = DVector::<f64>::zeros(n);
        let mut p1 = DMatrix::<f64>::zeros(n, n);
        let mut pair = DMatrix::<f64>::zeros(n, n);
        let mut head = DMatrix::<f64>::zeros(n, n);
        let mut tail = DMatrix::<f64>::zeros(n, n);
        let mut vh = DMatrix::<f64>::zeros(d, n);
        let mut vv = DMatrix::<f64>::zeros(d, d);
        for seq in sequences {
            let m = model.smooth(seq).unwrap();
            h1 += &m.h_hat[0] / big_n;
            p1 += &m.p[0] / big_n;
            for t in 0..t_len {
                if t + 1 < t_len {
                    head += &m.p[t] / big_n;
                }
                if t > 0 {
                    tail += &m.p[t] / big_n;
                    pair += &m.p_pair[t - 1] / big_n;
                }
                vh += &seq[t] * m.h_hat[t].transpose() / big_n;
                vv += &seq[t] * seq[t].transpose() / big_n;
            }
        }
        let all = &p1 + &tail;
        let a = (&pair * head.clone().try_inverse().unwrap()).clone_owned();
        let c = (&vh * all.clone().try_inverse().unwrap()).clone_owned();
        let q = (&tail - &a * pair.transpose() - &pair * a.transpose()
            + &a * &head * a.transpose())
            / (t_len as f64 - 1.0);
        let r = (&vv - &c * vh.transpose() - &vh * c.transpose() + &c * &all * c.transpose())
            / t_len as f64;
        let v = &p1 - &h1 * h1.transpose();
        KalmanModel::new(h1, v, a, c, symmetrize(&q), symmetrize(&r)).unwrap()
    }

    #[test]
    fn online_step_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let truth = standard_model();
        let sequences = truth.sample_sequences(25, 6, &mut rng).unwrap();
        let model = KalmanModel::new(
            dv(&[0.2, -0.5]),
            dm(2, 2, &[1.2, 0.1, 0.1, 1.0]),
            dm(2, 2, &[0.7, 0.0, 0.0, 0.6]),
            dm(2, 2, &[0.9, 0.3, -0.1, 1.0]),
            dm(2, 2, &[0.5, 0.0, 0.0, 0.5]),
            dm(2, 2, &[0.8, 0.0, 0.0, 0.8]),
        )
        .unwrap();

        let batch = model
            .online_em_step(&sequences, 1e12, &UpdateMask::all())
            .unwrap();
        let reference = classical_m_step(&model, &sequences);
        let close = |x: &DMatrix<f64>, y: &DMatrix<f64>, what: &str| {
            assert!(
                (x - y).amax() <= 1e-7 * (1.0 + y.amax()),
                "{what}: {x} vs {y}"
            );
        };
        assert!((batch.pi1() - reference.pi1()).amax() < 1e-7);
        close(batch.v(), reference.v(), "V");
        close(batch.a(), reference.a(), "A");
        close(batch.c(), reference.c(), "C");
        close(batch.qn(), reference.qn(), "Qn");
        close(batch.rn(), reference.rn(), "Rn");

        let frozen = model
            .online_em_step(&sequences, 1e-12, &UpdateMask::all())
            .unwrap();
        assert!((frozen.pi1() - model.pi1()).amax() < 1e-7);
        close(frozen.v(), model.v(), "V frozen");
        close(frozen.a(), model.a(), "A frozen");
        close(frozen.c(), model.c(), "C frozen");
        close(frozen.qn(), model.qn(), "Qn frozen");
        close(frozen.rn(), model.rn(), "Rn frozen");
    }

    #[test]
    fn masked_parameters_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let truth = standard_model();
        let sequences = truth.sample_sequences(10, 5, &mut rng).unwrap();
        let model = standard_model();
        let masked = model
            .online_em_step(&sequences, 2.0, &UpdateMask::known_noise())
            .unwrap();
        assert_eq!(masked.qn(), model.qn());
        assert_eq!(masked.rn(), model.rn());

        // The unmasked parameters agree with the full update (Qn/Rn do not
        // feed back into the other closed forms within one step).
        let full = model
            .online_em_step(&sequences, 2.0, &UpdateMask::all())
            .unwrap();
        assert!((masked.pi1() - full.pi1()).amax() < 1e-14);
        assert!((masked.v() - full.v()).amax() < 1e-14);
        assert!((masked.a() - full.a()).amax() < 1e-14);
        assert!((masked.c() - full.c()).amax() < 1e-14);
    }

    /// EM upper bound with posteriors frozen at `base`, plus the inertia
    /// penalty, evaluated at a candidate parameter set.
    struct Candidate {
        pi1: DVector<f64>,
        v: DMatrix<f64>,
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        qn: DMatrix<f64>,
        rn: DMatrix<f64>,
    }

    fn penalized_objective(
        base: &KalmanModel,
        cand: &Candidate,
        sequences: &[Vec<DVector<f64>>],
        eta: f64,
    ) -> f64 {
        let t_len = sequences[0].len();
        let big_n = sequences.len() as f64;
        let v_inv = cand.v.clone().try_inverse().unwrap();
        let q_inv = cand.qn.clone().try_inverse().unwrap();
        let r_inv = cand.rn.clone().try_inverse().unwrap();
        let ln_det = |m: &DMatrix<f64>| {
            m.clone()
                .cholesky()
                .unwrap()
                .l()
                .diagonal()
                .map(f64::ln)
                .sum()
                * 2.0
        };

        let mut upper = 0.0;
        for seq in sequences {
            let m = base.smooth(seq).unwrap();
            let v_hat =
                &m.p[0] - &cand.pi1 * m.h_hat[0].transpose() - &m.h_hat[0] * cand.pi1.transpose()
                    + &cand.pi1 * cand.pi1.transpose();
            upper += ((&v_inv * v_hat).trace() + ln_det(&cand.v)) / big_n;
            for t in 1..t_len {
                let q_hat = &m.p[t]
                    - &cand.a * m.p_pair[t - 1].transpose()
                    - &m.p_pair[t - 1] * cand.a.transpose()
                    + &cand.a * &m.p[t - 1] * cand.a.transpose();
                upper += (&q_inv * q_hat).trace() / big_n;
            }
            upper += (t_len as f64 - 1.0) * ln_det(&cand.qn) / big_n;
            for t in 0..t_len {
                let r_hat = &seq[t] * seq[t].transpose()
                    - &cand.c * &m.h_hat[t] * seq[t].transpose()
                    - &seq[t] * m.h_hat[t].transpose() * cand.c.transpose()
                    + &cand.c * &m.p[t] * cand.c.transpose();
                upper += (&r_inv * r_hat).trace() / big_n;
            }
            upper += t_len as f64 * ln_det(&cand.rn) / big_n;
        }

        let prior = base.prior_moments(t_len);
        let mut u_head = DMatrix::<f64>::zeros(base.state_dim(), base.state_dim());
        for t in 0..t_len - 1 {
            u_head += &prior.u[t];
        }
        let u_all = &u_head + &prior.u[t_len - 1];
        let pi_diff = base.pi1() - &cand.pi1;
        let a_diff = base.a() - &cand.a;
        let c_diff = base.c() - &cand.c;
        let mut penalty = pi_diff.dot(&(&v_inv * &pi_diff));
        penalty += log_det_divergence(base.v(), &cand.v).unwrap();
        penalty += (&q_inv * (&a_diff * &u_head * a_diff.transpose())).trace();
        penalty += (t_len as f64 - 1.0) * log_det_divergence(base.qn(), &cand.qn).unwrap();
        penalty += (&r_inv * (&c_diff * &u_all * c_diff.transpose())).trace();
        penalty += t_len as f64 * log_det_divergence(base.rn(), &cand.rn).unwrap();

        0.5 * (upper + penalty / eta)
    }

    /// Packs a candidate into a flat vector: pi1, then symmetric upper
    /// triangles of V/Qn/Rn, then A and C row-major.
    fn pack(cand: &Candidate) -> Vec<f64> {
        let mut x = Vec::new();
        x.extend(cand.pi1.iter());
        for m in [&cand.v, &cand.qn, &cand.rn] {
            for i in 0..m.nrows() {
                for j in i..m.ncols() {
                    x.push(m[(i, j)]);
                }
            }
        }
        for m in [&cand.a, &cand.c] {
            x.extend(m.transpose().iter()); // row-major order
        }
        x
    }

    fn unpack(x: &[f64], n: usize, d: usize) -> Candidate {
        let mut idx = 0;
        let mut take = |count: usize| {
            let slice = &x[idx..idx + count];
            idx += count;
            slice.to_vec()
        };
        let pi1 = dv(&take(n));
        let sym = |dim: usize, take: &mut dyn FnMut(usize) -> Vec<f64>| {
            let vals = take(dim * (dim + 1) / 2);
            let mut m = DMatrix::<f64>::zeros(dim, dim);
            let mut k = 0;
            for i in 0..dim {
                for j in i..dim {
                    m[(i, j)] = vals[k];
                    m[(j, i)] = vals[k];
                    k += 1;
                }
            }
            m
        };
        let v = sym(n, &mut take);
        let qn = sym(n, &mut take);
        let rn = sym(d, &mut take);
        let a = dm(n, n, &take(n * n));
        let c = dm(d, n, &take(d * n));
        Candidate {
            pi1,
            v,
            a,
            c,
            qn,
            rn,
        }
    }

    #[test]
    fn online_step_is_stationary_point_of_penalized_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let truth = standard_model();
        let sequences = truth.sample_sequences(3, 5, &mut rng).unwrap();
        let base = standard_model();
        let eta = 0.8;
        let stepped = base
            .online_em_step(&sequences, eta, &UpdateMask::all())
            .unwrap();
        let cand = Candidate {
            pi1: stepped.pi1().clone(),
            v: stepped.v().clone(),
            a: stepped.a().clone(),
            c: stepped.c().clone(),
            qn: stepped.qn().clone(),
            rn: stepped.rn().clone(),
        };
        let x0 = pack(&cand);
        let f = |x: &[f64]| penalized_objective(&base, &unpack(x, 2, 2), &sequences, eta);
        let grad = oracles::fd_gradient(&f, &x0, 1e-5);
        assert!(
            oracles::norm(&grad) < 1e-5,
            "gradient norm {} too large: {grad:?}",
            oracles::norm(&grad)
        );
    }

    #[test]
    fn repeated_large_eta_steps_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let truth = standard_model();
        let sequences = truth.sample_sequences(30, 6, &mut rng).unwrap();
        let mut model = KalmanModel::new(
            dv(&[0.0, 0.0]),
            DMatrix::identity(2, 2),
            dm(2, 2, &[0.5, 0.0, 0.0, 0.5]),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2) * 0.7,
            DMatrix::identity(2, 2) * 0.7,
        )
        .unwrap();
        let mut nll = model.nll(&sequences).unwrap();
        for _ in 0..10 {
            model = model
                .online_em_step(&sequences, 1e12, &UpdateMask::all())
                .unwrap();
            let next = model.nll(&sequences).unwrap();
            assert!(
                next <= nll + 1e-6,
                "batch-limit EM increased nll: {nll} -> {next}"
            );
            nll = next;
        }
    }

    #[test]
    fn online_step_decreases_nll_at_moderate_eta() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let truth = standard_model();
        let sequences = truth.sample_sequences(20, 5, &mut rng).unwrap();
        let mut model = KalmanModel::new(
            dv(&[0.1, 0.1]),
            DMatrix::identity(2, 2) * 1.5,
            dm(2, 2, &[0.6, 0.1, 0.0, 0.5]),
            dm(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DMatrix::identity(2, 2) * 0.6,
            DMatrix::identity(2, 2) * 0.8,
        )
        .unwrap();
        for &eta in &[0.5, 1.0, 4.0] {
            let stepped = model
                .online_em_step(&sequences, eta, &UpdateMask::all())
                .unwrap();
            assert!(
                stepped.nll(&sequences).unwrap() <= model.nll(&sequences).unwrap() + 1e-8,
                "nll increased at eta={eta}"
            );
            model = stepped;
        }
    }

    #[test]
    fn sampling_moments_and_determinism() {
        let model = standard_model();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let samples = model.sample_sequences(10_000, 3, &mut rng).unwrap();
        let prior = model.prior_moments(3);
        for t in 0..3 {
            let mut second = DMatrix::<f64>::zeros(2, 2);
            for seq in &samples {
                second += &seq[t] * seq[t].transpose() / samples.len() as f64;
            }
            let expected = model.c() * &prior.u[t] * model.c().transpose() + model.rn();
            assert!(
                (&second - &expected).amax() < 0.15,
                "time {t}: empirical second moment {second} vs {expected}"
            );
        }

        let mut rng_a = ChaCha8Rng::seed_from_u64(77);
        let mut rng_b = ChaCha8Rng::seed_from_u64(77);
        let a = model.sample_sequences(4, 5, &mut rng_a).unwrap();
        let b = model.sample_sequences(4, 5, &mut rng_b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn near_deterministic_sampling_follows_the_mean_trajectory() {
        let model = KalmanModel::new(
            dv(&[1.0, -0.5]),
            DMatrix::identity(2, 2) * 1e-9,
            dm(2, 2, &[0.8, 0.1, 0.0, 0.9]),
            dm(2, 2, &[1.0, 0.0, 0.5, 1.0]),
            DMatrix::identity(2, 2) * 1e-9,
            DMatrix::identity(2, 2) * 1e-9,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let seq = &model.sample_sequences(1, 4, &mut rng).unwrap()[0];
        let mut h = model.pi1().clone();
        for (t, v) in seq.iter().enumerate() {
            if t > 0 {
                h = model.a() * &h;
            }
            assert!(
                (v - model.c() * &h).amax() < 1e-3,
                "time {t}: sampled {v} vs deterministic {}",
                model.c() * &h
            );
        }
    }

    #[test]
    fn prior_moments_recursion_values() {
        let model = scalar_model(2.0, 0.5, 0.9, 1.0, 0.3, 0.4);
        let prior = model.prior_moments(3);
        assert_relative_eq!(prior.u[0][(0, 0)], 0.5 + 4.0, epsilon = 1e-12);
        assert_relative_eq!(prior.u[1][(0, 0)], 0.3 + 0.81 * 4.5, epsilon = 1e-12);
        assert_relative_eq!(
            prior.u[2][(0, 0)],
            0.3 + 0.81 * (0.3 + 0.81 * 4.5),
            epsilon = 1e-12
        );
    }

    #[test]
    fn constructor_rejects_invalid_inputs() {
        let bad_v = KalmanModel::new(
            dv(&[0.0]),
            dm(1, 1, &[-0.5]),
            dm(1, 1, &[0.5]),
            dm(1, 1, &[1.0]),
            dm(1, 1, &[0.5]),
            dm(1, 1, &[0.5]),
        );
        assert!(bad_v.unwrap_err().to_string().contains("positive definite"));

        let bad_dims = KalmanModel::new(
            dv(&[0.0, 0.0]),
            DMatrix::identity(2, 2),
            dm(1, 1, &[0.5]),
            dm(1, 2, &[1.0, 0.0]),
            DMatrix::identity(2, 2),
            dm(1, 1, &[0.5]),
        );
        assert!(bad_dims.is_err());

        let model = standard_model();
        assert!(model
            .online_em_step(&[vec![dv(&[0.0, 0.0])]], 1.0, &UpdateMask::all())
            .is_err());
        let uneven = vec![
            vec![dv(&[0.0, 0.0]), dv(&[0.0, 0.0])],
            vec![dv(&[0.0, 0.0]), dv(&[0.0, 0.0]), dv(&[0.0, 0.0])],
        ];
        assert!(model
            .online_em_step(&uneven, 1.0, &UpdateMask::all())
            .is_err());
    }
}
