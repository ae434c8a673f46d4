//! Splitting numerical integration (SNI) for low-rank matrix approximation
//! and completion on the fixed-rank manifold, with the reference methods and
//! data plumbing needed to compare it against block power iteration and the
//! randomized SVD.
//!
//! Iterates are kept in factored form `Y = U S V^T` ([`LowRankFactors`]).
//! [`sni_run`] approximates a dense matrix; [`sni_complete`] fits observed
//! entries only.

pub mod baselines;
pub mod completion;
pub mod datasets;
pub mod error;
pub mod integrators;
pub mod manifold;
pub mod matcore;

pub use completion::{
    evaluate_rmse, objective_f1, select_iterations, sni_complete, sparse_residual,
    CompletionTarget, EarlyStopChoice, Observation, ObservationSet, PredictionScore,
    SparseResidual,
};
pub use error::{Error, Result, SolverError};
pub use integrators::{
    dlra_run, dlra_step, run_with_trace, sni_run, sni_run_observed, sni_step, ConvergenceTrace,
    DenseTarget, GradientOracle, Method, ObservationMode, Observer, Residual, SolverConfig,
    StopReason, SvdResult, TraceRecord,
};
pub use manifold::{
    riemannian_gradient_components, tangent_project, LowRankFactors, TangentComponents,
};
pub use matcore::DenseMatrix;
