use std::path::PathBuf;

use thiserror::Error;

use crate::integrators::ConvergenceTrace;

/// Errors raised by the kernels, solvers and loaders of this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A thin QR input had numerical rank below its column count. Inside a
    /// solver this means the iterate left the fixed-rank manifold.
    #[error("matrix is rank deficient: sigma_min = {sigma_min:e} <= tolerance {tolerance:e} (need rank {rank})")]
    RankDeficient {
        rank: usize,
        sigma_min: f64,
        tolerance: f64,
    },

    /// The core factor S is numerically singular, so S^{-1} is unavailable.
    #[error("core factor is singular: sigma_min = {sigma_min:e} <= tolerance {tolerance:e}")]
    SingularCore { sigma_min: f64, tolerance: f64 },

    #[error("dimension mismatch in {context}: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        context: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("factor {0} does not have orthonormal columns (residual {1:e})")]
    NotOrthonormal(&'static str, f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid observation set: {0}")]
    InvalidObservations(String),

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A solver run that aborted part way. Carries the trace recorded up to the
/// failing iteration.
#[derive(Debug, Error)]
#[error("solver aborted at iteration {iteration}: {error}")]
pub struct SolverError {
    #[source]
    pub error: Error,
    pub iteration: usize,
    pub trace: ConvergenceTrace,
}

impl SolverError {
    pub(crate) fn setup(error: Error, trace: ConvergenceTrace) -> Self {
        Self {
            error,
            iteration: 0,
            trace,
        }
    }
}
