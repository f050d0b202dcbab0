//! Error type shared by every module of the crate.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, EmError>;

/// Unified error type for model construction, inference, and updates.
#[derive(Debug, Error)]
pub enum EmError {
    /// A parameter vector or matrix violates its domain (wrong sign,
    /// non-finite entry, not positive definite, not a probability simplex).
    /// `what` names the offending quantity, including the coordinate where
    /// that is meaningful.
    #[error("invalid parameter: {what}")]
    InvalidParameter { what: String },

    /// Arguments to an operation are inconsistent with each other or with
    /// the model (dimension mismatch, empty batch, out-of-range constant).
    #[error("invalid argument: {what}")]
    InvalidArgument { what: String },

    /// A model-level invariant does not hold (transition matrix not
    /// row-stochastic, transient block not substochastic, ...).
    #[error("invalid model: {what}")]
    InvalidModel { what: String },

    /// Numerical failure during inference or an update: a quantity that
    /// must be finite or positive definite is not.  `where_` localizes the
    /// failure (observation or time index where known).
    #[error("numerical failure at {where_}: {what}")]
    Numerical { where_: String, what: String },
}

impl EmError {
    pub fn invalid_parameter(what: impl Into<String>) -> Self {
        EmError::InvalidParameter { what: what.into() }
    }

    pub fn invalid_argument(what: impl Into<String>) -> Self {
        EmError::InvalidArgument { what: what.into() }
    }

    pub fn invalid_model(what: impl Into<String>) -> Self {
        EmError::InvalidModel { what: what.into() }
    }

    pub fn numerical(where_: impl Into<String>, what: impl Into<String>) -> Self {
        EmError::Numerical {
            where_: where_.into(),
            what: what.into(),
        }
    }
}
