//! Online expectation-maximization with a divergence-based inertia term.
//!
//! The classical EM algorithm minimizes an upper bound on the negative
//! log-likelihood that is tight at the current parameters.  The online
//! variant implemented here minimizes, on each mini-batch, the sum of that
//! bound and a relative-entropy penalty `(1/eta) * D(current, candidate)`
//! that anchors the update to the current model.  As `eta -> inf` the step
//! coincides with a full batch EM step on the mini-batch; as `eta -> 0` the
//! parameters do not move.  For models whose complete-data distribution is
//! an exponential family the penalized bound has a closed-form minimizer,
//! which makes the per-batch update exact and guarantees that the mini-batch
//! negative log-likelihood never increases.
//!
//! The same relative-entropy machinery yields a closed-form rule for
//! combining several models of the same shape into a single one (the
//! divergence-weighted barycenter), which is what the distributed training
//! mode of the companion harness uses to merge per-worker models.
//!
//! Model families provided:
//!
//! * [`mixture::MixtureModel`] — finite mixtures of exponential-family
//!   components ([`expfam::ExpFamSpec`]: multivariate Gaussian or Poisson);
//! * [`hmm::HmmModel`] — hidden Markov models with absorbing states and
//!   exponential-family emissions on the transient states;
//! * [`kalman::KalmanModel`] — linear-Gaussian state-space models with
//!   Rauch-Tung-Striebel smoothing;
//! * [`dirichlet::DirichletModel`] — compound Dirichlet (Polya) models of
//!   count vectors, fit by Newton steps on the EM upper bound; the inertia
//!   term has no closed form here and is approximated by sampling.
//!
//! Supporting modules: [`expfam`] (natural/expectation coordinates, Bregman
//! divergences, parameter combination), [`combiner`] (model merging),
//! [`schedule`] (step-size schedules and the online training loop),
//! [`model_io`] (serde-friendly model snapshots), [`numeric`] and
//! [`linalg`] (scalar and matrix utilities).

pub mod combiner;
pub mod dirichlet;
pub mod error;
pub mod expfam;
pub mod hmm;
pub mod kalman;
pub mod linalg;
pub mod mixture;
pub mod model_io;
pub mod numeric;
pub mod schedule;

pub use error::{EmError, Result};
