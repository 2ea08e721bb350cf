//! Error types shared across the solver library.

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an API contract (mismatched spaces, grids, intervals).
    #[error("contract violation: {0}")]
    Contract(String),

    /// An argument fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The generalized-exponential series did not converge within the term cap.
    #[error(
        "series did not converge within {terms} terms \
         (partial sum {partial_sum:e}, last term {last_term:e})"
    )]
    SeriesDivergence {
        terms: usize,
        partial_sum: f64,
        last_term: f64,
    },

    /// A hypothesis needed for certified windows does not hold for this problem.
    #[error("unsound configuration: {0}")]
    UnsoundConfig(String),

    /// Picard iteration failed to contract within the iteration cap; the
    /// quadrature is too coarse relative to the certificate.
    #[error(
        "fixed-point iteration exceeded {max_iter} iterations (last update {last_update:e}); \
         grid too coarse for the certified contraction"
    )]
    NonContraction { max_iter: usize, last_update: f64 },

    /// A Picard iterate escaped the certified ball; the Lipschitz or kernel
    /// bounds backing the certificate are unsound for this problem.
    #[error("iterate escaped the certified ball: sup-norm {observed:e} > {allowed:e}")]
    BallViolation { observed: f64, allowed: f64 },

    /// Observed contraction exceeded the certified factor plus slack.
    #[error("measured contraction ratio {ratio} exceeds certified bound {bound} + slack {slack}")]
    ContractionExceeded { ratio: f64, bound: f64, slack: f64 },

    /// Window junction mismatch during gluing.
    #[error("gluing failed at t = {at}: junction mismatch {mismatch:e} exceeds glue_tol {glue_tol:e}")]
    Glue {
        mismatch: f64,
        glue_tol: f64,
        at: f64,
    },

    /// Problem file could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// Problem file parsed but a field violates its constraint.
    #[error("validation error: field `{field}`: {constraint}")]
    Validation { field: String, constraint: String },

    /// An eager hypothesis audit failed at load time.
    #[error("hypothesis audit failed: {0}")]
    Audit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn validation(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            constraint: constraint.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
