//! Decaying learning-rate schedules and the online training loop shared by
//! all model families.
//!
//! The loop walks a stream of mini-batches, applies one inertial online EM
//! step per batch with `eta = eta0 / t^beta`, and records the batch
//! negative log-likelihood before and after each step (plus an optional
//! holdout evaluation on a fixed cadence) into a [`TrainLog`] that can be
//! serialized to CSV.

use std::time::Instant;

use log::warn;
use nalgebra::DVector;
use rand::Rng;

use crate::dirichlet::{CountVector, DirichletModel};
use crate::error::{EmError, Result};
use crate::hmm::HmmModel;
use crate::kalman::{KalmanModel, UpdateMask};
use crate::mixture::MixtureModel;

/// Learning rate `eta0 / t^beta` for iteration `t >= 1`.
///
/// The exponent range `0.5 < beta <= 1` makes the rates sum to infinity
/// while their squares sum to a finite value (the usual stochastic-
/// approximation conditions); the range is enforced structurally rather
/// than by summation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecaySchedule {
    eta0: f64,
    beta: f64,
}

impl DecaySchedule {
    /// Strict constructor: `eta0 > 0` and `0.5 < beta <= 1`.
    pub fn new(eta0: f64, beta: f64) -> Result<Self> {
        if !(eta0 > 0.0) || !eta0.is_finite() {
            return Err(EmError::invalid_argument(format!(
                "eta0 must be a positive finite number, got {eta0}"
            )));
        }
        if !(beta > 0.5 && beta <= 1.0) {
            return Err(EmError::invalid_argument(format!(
                "beta must lie in (0.5, 1], got {beta}"
            )));
        }
        Ok(DecaySchedule { eta0, beta })
    }

    /// Like [`DecaySchedule::new`] but also admits the boundary value
    /// `beta = 0.5` with a warning: there the squared rates are no longer
    /// summable, yet the value shows up in practice.
    pub fn new_lenient(eta0: f64, beta: f64) -> Result<Self> {
        if beta > 0.5 {
            return Self::new(eta0, beta);
        }
        if !(eta0 > 0.0) || !eta0.is_finite() {
            return Err(EmError::invalid_argument(format!(
                "eta0 must be a positive finite number, got {eta0}"
            )));
        }
        if beta != 0.5 {
            return Err(EmError::invalid_argument(format!(
                "beta must lie in [0.5, 1], got {beta}"
            )));
        }
        warn!("beta = 0.5: the squared learning rates are not summable");
        Ok(DecaySchedule { eta0, beta })
    }

    pub fn eta0(&self) -> f64 {
        self.eta0
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `eta0 / t^beta`; `t` counts iterations from 1.
    pub fn rate(&self, t: usize) -> Result<f64> {
        if t < 1 {
            return Err(EmError::invalid_argument("iteration numbers start at 1"));
        }
        Ok(self.eta0 / (t as f64).powf(self.beta))
    }
}

/// One row of a training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    /// Iteration number (1-based, global across epochs).
    pub t: usize,
    /// Learning rate used for this step.
    pub eta: f64,
    /// Batch negative log-likelihood before the step.
    pub nll_batch_pre: f64,
    /// Batch negative log-likelihood after the step.
    pub nll_batch_post: f64,
    /// Holdout negative log-likelihood, when evaluated this iteration.
    pub nll_holdout: Option<f64>,
    /// Wall time of the step in milliseconds (0 when timing is off, which
    /// keeps logs byte-identical across runs).
    pub ms: f64,
}

/// Per-iteration training records with strictly increasing iteration
/// numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn new() -> Self {
        TrainLog::default()
    }

    pub fn records(&self) -> &[TrainRecord] {
        &self.records
    }

    /// Appends a record; its iteration number must exceed the last one.
    pub fn push(&mut self, record: TrainRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.t <= last.t {
                return Err(EmError::invalid_argument(format!(
                    "iteration {} does not follow {}",
                    record.t, last.t
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    /// Concatenates another log (e.g. a later epoch) onto this one.
    pub fn append(&mut self, other: TrainLog) -> Result<()> {
        for record in other.records {
            self.push(record)?;
        }
        Ok(())
    }

    /// CSV with header `t,eta,nll_batch_pre,nll_batch_post,nll_holdout,ms`.
    /// The holdout column is dropped entirely when no record carries a
    /// holdout value.
    pub fn to_csv(&self) -> String {
        let with_holdout = self.records.iter().any(|r| r.nll_holdout.is_some());
        let mut out = String::new();
        if with_holdout {
            out.push_str("t,eta,nll_batch_pre,nll_batch_post,nll_holdout,ms\n");
        } else {
            out.push_str("t,eta,nll_batch_pre,nll_batch_post,ms\n");
        }
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}",
                r.t, r.eta, r.nll_batch_pre, r.nll_batch_post
            ));
            if with_holdout {
                match r.nll_holdout {
                    Some(value) => out.push_str(&format!(",{value}")),
                    None => out.push(','),
                }
            }
            out.push_str(&format!(",{}\n", r.ms));
        }
        out
    }
}

/// A model together with whatever its online EM step needs (masks, random
/// state, pseudo-sample settings), stepped in place by [`run_online`].
pub trait OnlineLearner {
    /// Mini-batch type the family consumes.
    type Batch;

    /// One inertial online EM step at learning rate `eta`.
    fn online_step(&mut self, batch: &Self::Batch, eta: f64) -> Result<()>;

    /// Negative log-likelihood of a batch under the current model.
    fn nll(&self, batch: &Self::Batch) -> Result<f64>;
}

impl OnlineLearner for MixtureModel {
    type Batch = Vec<DVector<f64>>;

    fn online_step(&mut self, batch: &Self::Batch, eta: f64) -> Result<()> {
        *self = self.online_em_step(batch, eta)?;
        Ok(())
    }

    fn nll(&self, batch: &Self::Batch) -> Result<f64> {
        MixtureModel::nll(self, batch)
    }
}

impl OnlineLearner for HmmModel {
    type Batch = Vec<Vec<DVector<f64>>>;

    fn online_step(&mut self, batch: &Self::Batch, eta: f64) -> Result<()> {
        *self = self.online_em_step(batch, eta)?;
        Ok(())
    }

    fn nll(&self, batch: &Self::Batch) -> Result<f64> {
        HmmModel::nll(self, batch)
    }
}

/// Kalman model plus the update mask its steps should respect.
pub struct KalmanLearner {
    pub model: KalmanModel,
    pub mask: UpdateMask,
}

impl OnlineLearner for KalmanLearner {
    type Batch = Vec<Vec<DVector<f64>>>;

    fn online_step(&mut self, batch: &Self::Batch, eta: f64) -> Result<()> {
        self.model = self.model.online_em_step(batch, eta, &self.mask)?;
        Ok(())
    }

    fn nll(&self, batch: &Self::Batch) -> Result<f64> {
        self.model.nll(batch)
    }
}

/// Compound Dirichlet model plus the sampled-inertia settings and the
/// random state the sampling consumes.
pub struct DirichletLearner<R: Rng> {
    pub model: DirichletModel,
    pub pseudo_count: usize,
    pub pseudo_words: Option<usize>,
    pub rng: R,
}

impl<R: Rng> OnlineLearner for DirichletLearner<R> {
    type Batch = Vec<CountVector>;

    fn online_step(&mut self, batch: &Self::Batch, eta: f64) -> Result<()> {
        self.model = self.model.online_em_step_sampled(
            batch,
            eta,
            self.pseudo_count,
            self.pseudo_words,
            &mut self.rng,
        )?;
        Ok(())
    }

    fn nll(&self, batch: &Self::Batch) -> Result<f64> {
        self.model.nll(batch)
    }
}

/// Runs one pass over `batches`, stepping the learner in place with
/// `eta = rate(start_t + i)` and logging per-batch likelihoods.
///
/// `holdout` is evaluated whenever the iteration number is a multiple of
/// `holdout_every`.  With `timing` off every `ms` field is 0, which keeps
/// the log — and hence the CSV — byte-identical across runs with the same
/// seed and stream order.  Stepper and evaluation errors abort the run,
/// tagged with the iteration that failed.
pub fn run_online<L: OnlineLearner>(
    learner: &mut L,
    batches: &[L::Batch],
    schedule: &DecaySchedule,
    start_t: usize,
    holdout: Option<&L::Batch>,
    holdout_every: usize,
    timing: bool,
) -> Result<TrainLog> {
    if batches.is_empty() {
        return Err(EmError::invalid_argument("empty batch stream"));
    }
    if start_t < 1 {
        return Err(EmError::invalid_argument("iteration numbers start at 1"));
    }
    if holdout.is_some() && holdout_every == 0 {
        return Err(EmError::invalid_argument(
            "holdout cadence must be positive when a holdout set is given",
        ));
    }
    let at_iteration =
        |t: usize, e: EmError| EmError::numerical(format!("iteration {t}"), e.to_string());
    let mut log = TrainLog::new();
    for (i, batch) in batches.iter().enumerate() {
        let t = start_t + i;
        let eta = schedule.rate(t)?;
        let started = Instant::now();
        let nll_batch_pre = learner.nll(batch).map_err(|e| at_iteration(t, e))?;
        learner
            .online_step(batch, eta)
            .map_err(|e| at_iteration(t, e))?;
        let nll_batch_post = learner.nll(batch).map_err(|e| at_iteration(t, e))?;
        let nll_holdout = match holdout {
            Some(held) if t % holdout_every == 0 => {
                Some(learner.nll(held).map_err(|e| at_iteration(t, e))?)
            }
            _ => None,
        };
        let ms = if timing {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        log.push(TrainRecord {
            t,
            eta,
            nll_batch_pre,
            nll_batch_post,
            nll_holdout,
            ms,
        })?;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::{ExpFamSpec, ExpectationParams};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dv(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn poisson_mixture(weights: &[f64], rates: &[f64]) -> MixtureModel {
        MixtureModel::new(
            ExpFamSpec::poisson(),
            dv(weights),
            rates.iter().map(|&r| ExpectationParams(dv(&[r]))).collect(),
        )
        .unwrap()
    }

    fn poisson_batches(
        truth: &MixtureModel,
        batches: usize,
        per_batch: usize,
        seed: u64,
    ) -> Vec<Vec<DVector<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..batches)
            .map(|_| truth.sample(per_batch, &mut rng).unwrap())
            .collect()
    }

    #[test]
    fn rate_matches_the_closed_form() {
        let schedule = DecaySchedule::new(0.5, 0.9).unwrap();
        assert_relative_eq!(schedule.rate(1).unwrap(), 0.5, epsilon = 0.0);
        assert!((schedule.rate(10).unwrap() - 0.06295).abs() < 1e-5);
        let mut previous = f64::INFINITY;
        for t in 1..=100 {
            let eta = schedule.rate(t).unwrap();
            assert!(eta > 0.0 && eta < previous, "rate must decrease strictly");
            previous = eta;
        }
        assert!(schedule.rate(0).is_err());
    }

    #[test]
    fn schedule_constructors_enforce_the_exponent_range() {
        assert!(DecaySchedule::new(1.0, 0.9).is_ok());
        assert!(DecaySchedule::new(1.0, 1.0).is_ok());
        assert!(DecaySchedule::new(0.0, 0.9).is_err());
        assert!(DecaySchedule::new(-1.0, 0.9).is_err());
        assert!(DecaySchedule::new(1.0, 0.5).is_err());
        assert!(DecaySchedule::new(1.0, 1.5).is_err());
        assert!(DecaySchedule::new(f64::NAN, 0.9).is_err());

        // The lenient form admits the boundary (with a warning) but still
        // rejects nonsense.
        let lenient = DecaySchedule::new_lenient(1.0, 0.5).unwrap();
        assert_relative_eq!(lenient.rate(4).unwrap(), 0.5, epsilon = 1e-15);
        assert!(DecaySchedule::new_lenient(1.0, 0.0).is_err());
        assert!(DecaySchedule::new_lenient(1.0, 0.4).is_err());
        assert!(DecaySchedule::new_lenient(1.0, 1.5).is_err());
    }

    #[test]
    fn online_run_never_increases_the_batch_nll() {
        let truth = poisson_mixture(&[0.35, 0.65], &[2.0, 9.0]);
        let batches = poisson_batches(&truth, 40, 50, 7);
        let holdout = truth
            .sample(500, &mut ChaCha8Rng::seed_from_u64(8))
            .unwrap();
        let mut learner = poisson_mixture(&[0.5, 0.5], &[1.0, 5.0]);
        let schedule = DecaySchedule::new(1.0, 0.9).unwrap();
        let log = run_online(
            &mut learner,
            &batches,
            &schedule,
            1,
            Some(&holdout),
            10,
            false,
        )
        .unwrap();

        assert_eq!(log.records().len(), 40);
        for (i, record) in log.records().iter().enumerate() {
            assert_eq!(record.t, i + 1);
            assert_relative_eq!(record.eta, schedule.rate(record.t).unwrap(), epsilon = 0.0);
            assert!(
                record.nll_batch_post <= record.nll_batch_pre + 1e-8,
                "iteration {}: nll rose from {} to {}",
                record.t,
                record.nll_batch_pre,
                record.nll_batch_post
            );
            assert_eq!(record.nll_holdout.is_some(), record.t % 10 == 0);
            assert_eq!(record.ms, 0.0);
        }
        // Training actually helped on the held-out data.
        let first_holdout = log.records()[9].nll_holdout.unwrap();
        let last_holdout = log.records()[39].nll_holdout.unwrap();
        assert!(last_holdout < first_holdout);
    }

    #[test]
    fn single_batch_with_huge_eta_is_one_batch_em_iteration() {
        let truth = poisson_mixture(&[0.35, 0.65], &[2.0, 9.0]);
        let batch = &poisson_batches(&truth, 1, 200, 11)[0];
        let start = poisson_mixture(&[0.5, 0.5], &[1.0, 5.0]);
        let mut learner = start.clone();
        let schedule = DecaySchedule::new(1e12, 1.0).unwrap();
        run_online(
            &mut learner,
            std::slice::from_ref(batch),
            &schedule,
            1,
            None,
            0,
            false,
        )
        .unwrap();
        let reference = start.batch_em_step(batch).unwrap();
        assert!((learner.weights() - reference.weights()).amax() < 1e-9);
        for h in 0..2 {
            assert_relative_eq!(
                learner.components()[h].0[0],
                reference.components()[h].0[0],
                max_relative = 1e-7
            );
        }
    }

    #[test]
    fn runs_are_deterministic_without_timing() {
        let truth = poisson_mixture(&[0.4, 0.6], &[1.5, 7.0]);
        let batches = poisson_batches(&truth, 12, 40, 21);
        let holdout = truth
            .sample(200, &mut ChaCha8Rng::seed_from_u64(22))
            .unwrap();
        let schedule = DecaySchedule::new(0.8, 0.7).unwrap();
        let run = || {
            let mut learner = poisson_mixture(&[0.5, 0.5], &[1.0, 4.0]);
            run_online(
                &mut learner,
                &batches,
                &schedule,
                1,
                Some(&holdout),
                3,
                false,
            )
            .unwrap()
            .to_csv()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn csv_drops_the_holdout_column_when_nothing_was_evaluated() {
        let mut log = TrainLog::new();
        log.push(TrainRecord {
            t: 1,
            eta: 0.5,
            nll_batch_pre: 10.0,
            nll_batch_post: 9.0,
            nll_holdout: None,
            ms: 0.0,
        })
        .unwrap();
        let csv = log.to_csv();
        assert!(csv.starts_with("t,eta,nll_batch_pre,nll_batch_post,ms\n"));
        assert!(!csv.contains("nll_holdout"));

        log.push(TrainRecord {
            t: 2,
            eta: 0.4,
            nll_batch_pre: 9.0,
            nll_batch_post: 8.5,
            nll_holdout: Some(42.0),
            ms: 0.0,
        })
        .unwrap();
        let csv = log.to_csv();
        assert!(csv.starts_with("t,eta,nll_batch_pre,nll_batch_post,nll_holdout,ms\n"));
        // The record without a holdout value keeps an empty cell.
        assert!(csv.contains("1,0.5,10,9,,0\n"));
        assert!(csv.contains("2,0.4,9,8.5,42,0\n"));
    }

    #[test]
    fn iteration_numbers_must_increase_strictly() {
        let record = |t: usize| TrainRecord {
            t,
            eta: 1.0,
            nll_batch_pre: 1.0,
            nll_batch_post: 1.0,
            nll_holdout: None,
            ms: 0.0,
        };
        let mut log = TrainLog::new();
        log.push(record(3)).unwrap();
        assert!(log.push(record(3)).is_err());
        assert!(log.push(record(2)).is_err());
        log.push(record(4)).unwrap();

        let mut tail = TrainLog::new();
        tail.push(record(5)).unwrap();
        log.append(tail).unwrap();
        let mut stale = TrainLog::new();
        stale.push(record(4)).unwrap();
        assert!(log.append(stale).is_err());
    }

    #[test]
    fn stepper_errors_carry_the_iteration_index() {
        let truth = poisson_mixture(&[0.5, 0.5], &[2.0, 6.0]);
        let mut batches = poisson_batches(&truth, 3, 20, 31);
        // Poison the second batch with an observation of the wrong shape.
        batches[1][0] = dv(&[1.0, 2.0]);
        let mut learner = poisson_mixture(&[0.5, 0.5], &[1.0, 5.0]);
        let schedule = DecaySchedule::new(1.0, 0.9).unwrap();
        let err = run_online(&mut learner, &batches, &schedule, 1, None, 0, false).unwrap_err();
        assert!(
            err.to_string().contains("iteration 2"),
            "error should name the failing iteration: {err}"
        );
    }

    #[test]
    fn later_epochs_continue_the_iteration_count() {
        let truth = poisson_mixture(&[0.4, 0.6], &[2.0, 8.0]);
        let batches = poisson_batches(&truth, 5, 30, 41);
        let schedule = DecaySchedule::new(1.0, 0.9).unwrap();
        let mut learner = poisson_mixture(&[0.5, 0.5], &[1.0, 5.0]);
        let mut log = run_online(&mut learner, &batches, &schedule, 1, None, 0, false).unwrap();
        let second = run_online(&mut learner, &batches, &schedule, 6, None, 0, false).unwrap();
        log.append(second).unwrap();
        let ts: Vec<usize> = log.records().iter().map(|r| r.t).collect();
        assert_eq!(ts, (1..=10).collect::<Vec<_>>());
        // The rate keeps decaying across the epoch boundary.
        assert!(log.records()[5].eta < log.records()[4].eta);
    }
}
