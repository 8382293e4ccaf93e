//! Crate-wide error type.
//!
//! Variants are grouped by failure class so callers (in particular the CLI)
//! can map them to exit codes: configuration and input problems are
//! recoverable user errors, numeric failures indicate the computation itself
//! broke down and any partial output must not be trusted.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("curvature must be finite, got {0}")]
    InvalidCurvature(f64),

    #[error("point outside manifold domain: |x|^2 = {norm_sq:.6e} exceeds 1/|K| = {bound:.6e} for K = {k}")]
    OutOfDomain { norm_sq: f64, bound: f64, k: f64 },

    #[error("moebius addition is singular (|denominator| < {eps:.1e}) for K = {k}")]
    SingularAddition { eps: f64, k: f64 },

    #[error("signature parse error: {0}")]
    SignatureParse(String),

    #[error("{path}:{line}: {msg}")]
    Data {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input (paths, labels, configs)
    /// rather than by a numeric breakdown during computation.
    pub fn is_usage(&self) -> bool {
        !matches!(
            self,
            Error::OutOfDomain { .. }
                | Error::SingularAddition { .. }
                | Error::NonFinite { .. }
                | Error::Numeric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
