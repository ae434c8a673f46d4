//! Projector-splitting integrator (SNI) for `min ||M - Y||_F` over rank-r
//! matrices, and the explicit dynamical low-rank (DLRA) gradient baseline.
//!
//! One SNI step integrates the three sub-flows of the tangent-projected
//! dynamics `Y' = U U^T A' - U U^T A' V V^T + A' V V^T` exactly and in
//! sequence, with unit step size, where `A'` is the negative Euclidean
//! gradient (the residual `M - Y` in the fully observed case):
//!
//! ```text
//! Q  = A' V_{i-1}
//! K  = U_{i-1} S_{i-1} + Q          (U S)' = A' V flow
//! [U_i, S^]   = qr(K)
//! S~ = S^ - U_i^T Q                  S' = -U^T A' V flow
//! L  = V_{i-1} S~^T + A'^T U_i       (S V^T)' = U^T A' flow
//! [V_i, S_i^T] = qr(L)
//! ```
//!
//! With full observation this collapses to `K = M V_{i-1}` and `L = M^T U_i`,
//! one sweep of block subspace iteration.

use std::time::{Duration, Instant};

use crate::error::{Error, Result, SolverError};
use crate::manifold::{components_from_products, LowRankFactors};
use crate::matcore::{
    fro_norm, matmul_ordered, sigma_min, small_svd, thin_qr, tr_matmul_ordered, DenseMatrix, ThinQr,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObservationMode {
    FullObservation,
    PartialObservation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Sni,
    Dlra,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sni => "sni",
            Method::Dlra => "dlra",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub rank: usize,
    /// Stop once `sigma_min(V_{i-1}^T V_i) > tolerance`. Must lie in (0, 1).
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// DLRA step size. SNI always integrates with unit step.
    pub stepsize: f64,
    pub mode: ObservationMode,
    /// Secondary stop in partial-observation mode: `|df1| / f1` below this.
    pub objective_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rank: 1,
            tolerance: 1.0 - 1e-12,
            max_iterations: 300,
            seed: 0,
            stepsize: 1e-3,
            mode: ObservationMode::FullObservation,
            objective_floor: 1e-9,
        }
    }
}

impl SolverConfig {
    pub fn with_rank(rank: usize) -> Self {
        Self {
            rank,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be at least 1".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tolerance {} must lie in (0, 1)",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !(self.stepsize > 0.0 && self.stepsize.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "stepsize {} must be positive",
                self.stepsize
            )));
        }
        if !(self.objective_floor >= 0.0) {
            return Err(Error::InvalidConfig(
                "objective_floor must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// The negative Euclidean gradient `A'` of an objective at some iterate. The
/// integrators only ever need the two thin products below.
pub trait Residual {
    fn shape(&self) -> (usize, usize);
    /// `A' V`.
    fn mul_right(&self, v: &DenseMatrix) -> DenseMatrix;
    /// `A'^T U`.
    fn tr_mul_right(&self, u: &DenseMatrix) -> DenseMatrix;
}

impl Residual for DenseMatrix {
    fn shape(&self) -> (usize, usize) {
        DenseMatrix::shape(self)
    }

    fn mul_right(&self, v: &DenseMatrix) -> DenseMatrix {
        matmul_ordered(self, v)
    }

    fn tr_mul_right(&self, u: &DenseMatrix) -> DenseMatrix {
        tr_matmul_ordered(self, u)
    }
}

/// Supplies the residual `-grad f(Y)` of an objective and its value.
pub trait GradientOracle {
    type Residual: Residual;

    fn shape(&self) -> (usize, usize);
    fn mode(&self) -> ObservationMode;
    fn residual(&self, at: &LowRankFactors) -> Self::Residual;
    /// Objective recorded in traces: `||Y - M||_F` when fully observed, `f1`
    /// otherwise.
    fn objective(&self, residual: &Self::Residual) -> f64;
    /// The full target, if there is one, for subspace-error diagnostics.
    fn dense_target(&self) -> Option<&DenseMatrix> {
        None
    }
}

/// `f(Y) = 1/2 ||Y - M||_F^2` for a fully observed dense `M`.
#[derive(Debug, Clone, Copy)]
pub struct DenseTarget<'a> {
    target: &'a DenseMatrix,
}

impl<'a> DenseTarget<'a> {
    pub fn new(target: &'a DenseMatrix) -> Self {
        Self { target }
    }
}

impl GradientOracle for DenseTarget<'_> {
    type Residual = DenseMatrix;

    fn shape(&self) -> (usize, usize) {
        self.target.shape()
    }

    fn mode(&self) -> ObservationMode {
        ObservationMode::FullObservation
    }

    /// `M - U S V^T`, each prediction summed over the rank index in order.
    fn residual(&self, at: &LowRankFactors) -> DenseMatrix {
        let (m, n) = self.target.shape();
        let us = at.left_scaled();
        let v = at.v();
        let r = at.rank();
        let mut out = DenseMatrix::zeros(m, n);
        let mut pred = vec![0.0; m];
        for j in 0..n {
            pred.iter_mut().for_each(|p| *p = 0.0);
            for k in 0..r {
                let coeff = v[(j, k)];
                for (p, &x) in pred.iter_mut().zip(us.column(k).iter()) {
                    *p += x * coeff;
                }
            }
            for i in 0..m {
                out[(i, j)] = self.target[(i, j)] - pred[i];
            }
        }
        out
    }

    fn objective(&self, residual: &DenseMatrix) -> f64 {
        fro_norm(residual)
    }

    fn dense_target(&self) -> Option<&DenseMatrix> {
        Some(self.target)
    }
}

/// One splitting step from `prev` along the residual `da`.
///
/// The returned core is the transpose of the second QR's triangular factor,
/// so it is lower triangular rather than diagonal.
pub fn sni_step<R: Residual + ?Sized>(prev: &LowRankFactors, da: &R) -> Result<LowRankFactors> {
    prev.check_target_shape("sni_step residual", da.shape())?;
    let q = da.mul_right(prev.v());
    let k = prev.left_scaled() + &q;
    let ThinQr { q: u_next, r: s_k } = thin_qr(&k)?;
    let s_mid = s_k - tr_matmul_ordered(&u_next, &q);
    let l = matmul_ordered(prev.v(), &s_mid.transpose()) + da.tr_mul_right(&u_next);
    let ThinQr { q: v_next, r: s_l } = thin_qr(&l)?;
    Ok(LowRankFactors::from_parts_unchecked(
        u_next,
        s_l.transpose(),
        v_next,
    ))
}

/// Explicit Euler step of the dynamical low-rank flow with step `eps`,
/// followed by QR re-orthonormalization of `U` and `V` with the triangular
/// factors absorbed into `S`. The absorption leaves `U S V^T` unchanged.
pub fn dlra_step<R: Residual + ?Sized>(
    prev: &LowRankFactors,
    da: &R,
    eps: f64,
) -> Result<LowRankFactors> {
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "stepsize {eps} must be positive"
        )));
    }
    prev.check_target_shape("dlra_step residual", da.shape())?;
    let comps =
        components_from_products(prev, &da.mul_right(prev.v()), &da.tr_mul_right(prev.u()))?;
    let u = prev.u() + &comps.du * eps;
    let s = prev.s() + &comps.ds * eps;
    let v = prev.v() + &comps.dv * eps;
    let qu = thin_qr(&u)?;
    let qv = thin_qr(&v)?;
    let core = &qu.r * s * qv.r.transpose();
    Ok(LowRankFactors::from_parts_unchecked(qu.q, core, qv.q))
}

/// One row of a convergence trace. Iteration 0 describes the starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    /// `||Y_i - M||_F` (full observation) or `f1(Y_i)` (partial observation).
    pub objective: f64,
    /// `||U_i U_i^T M - M||_F`, full observation with detailed tracing only.
    pub u_subspace_error: Option<f64>,
    /// `||M V_i V_i^T - M||_F`, full observation with detailed tracing only.
    pub v_subspace_error: Option<f64>,
    /// `sigma_min(V_{i-1}^T V_i)`; absent for iteration 0.
    pub sigma_min: Option<f64>,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTrace {
    pub mode: ObservationMode,
    pub initial: TraceRecord,
    /// One record per executed iteration, indices 1, 2, ...
    pub records: Vec<TraceRecord>,
}

impl ConvergenceTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Initial record followed by all iteration records.
    pub fn all_records(&self) -> impl Iterator<Item = &TraceRecord> {
        std::iter::once(&self.initial).chain(self.records.iter())
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.all_records().map(|r| r.objective).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// `sigma_min(V_{i-1}^T V_i)` exceeded the tolerance.
    SubspaceConverged,
    /// Relative objective change fell below the floor (partial observation).
    ObjectiveStalled,
    MaxIterations,
    /// A fixed-budget baseline finished its prescribed work.
    BudgetCompleted,
    /// The caller's observer asked to stop.
    EarlyStopped,
}

/// Truncated SVD `U diag(d) V^T` produced by a solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
    pub trace: ConvergenceTrace,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub iterations: usize,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn assemble(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for (j, &d) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(d);
        }
        us * self.v.transpose()
    }

    /// `||U D V^T - reference||_F / ||reference||_F`.
    pub fn relative_error(&self, reference: &DenseMatrix) -> f64 {
        fro_norm(&(self.assemble() - reference)) / fro_norm(reference)
    }

    /// The result as manifold factors with a diagonal core.
    pub fn factors(&self) -> Result<LowRankFactors> {
        let d = nalgebra::DVector::from_column_slice(&self.singular_values);
        LowRankFactors::new(
            self.u.clone(),
            DenseMatrix::from_diagonal(&d),
            self.v.clone(),
        )
    }

    /// Equivalent of the bit pattern of the numerical output (factors and
    /// singular values), for determinism checks.
    pub fn numeric_bits(&self) -> Vec<u64> {
        self.u
            .iter()
            .chain(self.singular_values.iter())
            .chain(self.v.iter())
            .map(|x| x.to_bits())
            .collect()
    }
}

/// Builds the truncated SVD from the final factors: `S = U_s D V_s^T`, so the
/// result is `(U U_s) D (V V_s)^T`.
pub(crate) fn finalize(
    f: &LowRankFactors,
    trace: ConvergenceTrace,
    stop_reason: StopReason,
    iterations: usize,
) -> Result<SvdResult> {
    let svd = small_svd(f.s())?;
    Ok(SvdResult {
        u: f.u() * &svd.u,
        singular_values: svd.singular_values,
        v: f.v() * &svd.v,
        trace,
        converged: stop_reason != StopReason::MaxIterations,
        stop_reason,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TraceDetail {
    Basic,
    Full,
}

fn subspace_errors(m: &DenseMatrix, f: &LowRankFactors) -> (f64, f64) {
    let (u, v) = (f.u(), f.v());
    let left = m - u * u.tr_mul(m);
    let right = m - (m * v) * v.transpose();
    (fro_norm(&left), fro_norm(&right))
}

/// Called after every iteration with its index and iterate; returning `true`
/// stops the run.
pub type Observer<'a> = &'a mut dyn FnMut(usize, &LowRankFactors) -> bool;

fn drive<G: GradientOracle>(
    method: Method,
    oracle: &G,
    f0: LowRankFactors,
    cfg: &SolverConfig,
    detail: TraceDetail,
    mut observer: Option<Observer<'_>>,
) -> Result<SvdResult, SolverError> {
    let start = Instant::now();
    let mode = oracle.mode();
    let record = |iteration: usize, objective: f64, f: &LowRankFactors, sigma: Option<f64>| {
        let (u_err, v_err) = match (detail, oracle.dense_target()) {
            (TraceDetail::Full, Some(m)) => {
                let (a, b) = subspace_errors(m, f);
                (Some(a), Some(b))
            }
            _ => (None, None),
        };
        TraceRecord {
            iteration,
            objective,
            u_subspace_error: u_err,
            v_subspace_error: v_err,
            sigma_min: sigma,
            elapsed: start.elapsed(),
        }
    };

    let mut residual = oracle.residual(&f0);
    let mut objective = oracle.objective(&residual);
    let mut trace = ConvergenceTrace {
        mode,
        initial: record(0, objective, &f0, None),
        records: Vec::new(),
    };

    let setup = cfg.validate().and_then(|_| {
        f0.check_target_shape("initial factors", oracle.shape())?;
        if f0.rank() != cfg.rank {
            return Err(Error::InvalidConfig(format!(
                "initial factors have rank {}, config asks for {}",
                f0.rank(),
                cfg.rank
            )));
        }
        Ok(())
    });
    if let Err(e) = setup {
        return Err(SolverError::setup(e, trace));
    }

    let mut current = f0;
    let mut stop_reason = StopReason::MaxIterations;
    let mut iterations = 0;
    for i in 1..=cfg.max_iterations {
        let stepped = match method {
            Method::Sni => sni_step(&current, &residual),
            Method::Dlra => dlra_step(&current, &residual, cfg.stepsize),
        };
        let next = match stepped {
            Ok(next) => next,
            Err(error) => {
                return Err(SolverError {
                    error,
                    iteration: i,
                    trace,
                })
            }
        };
        let sigma = sigma_min(&current.v().tr_mul(next.v()));
        let prev_objective = objective;
        residual = oracle.residual(&next);
        objective = oracle.objective(&residual);
        trace.records.push(record(i, objective, &next, Some(sigma)));
        let halt = observer.as_mut().is_some_and(|obs| obs(i, &next));
        current = next;
        iterations = i;

        if sigma > cfg.tolerance {
            stop_reason = StopReason::SubspaceConverged;
            break;
        }
        if mode == ObservationMode::PartialObservation {
            let stalled = prev_objective == 0.0
                || (prev_objective - objective).abs() / prev_objective < cfg.objective_floor;
            if stalled {
                stop_reason = StopReason::ObjectiveStalled;
                break;
            }
        }
        if halt {
            stop_reason = StopReason::EarlyStopped;
            break;
        }
    }

    let failed_at = iterations;
    finalize(&current, trace.clone(), stop_reason, iterations).map_err(|error| SolverError {
        error,
        iteration: failed_at,
        trace,
    })
}

/// Runs SNI from `f0` until the subspace criterion fires or the iteration
/// budget is spent, then diagonalizes the final core.
pub fn sni_run<G: GradientOracle>(
    oracle: &G,
    f0: LowRankFactors,
    cfg: &SolverConfig,
) -> Result<SvdResult, SolverError> {
    drive(Method::Sni, oracle, f0, cfg, TraceDetail::Basic, None)
}

/// [`sni_run`] with `observer` consulted after every iteration.
pub fn sni_run_observed<G: GradientOracle>(
    oracle: &G,
    f0: LowRankFactors,
    cfg: &SolverConfig,
    observer: Observer<'_>,
) -> Result<SvdResult, SolverError> {
    drive(
        Method::Sni,
        oracle,
        f0,
        cfg,
        TraceDetail::Basic,
        Some(observer),
    )
}

/// Runs the DLRA baseline with step `cfg.stepsize` and the same stopping rule.
pub fn dlra_run<G: GradientOracle>(
    oracle: &G,
    f0: LowRankFactors,
    cfg: &SolverConfig,
) -> Result<SvdResult, SolverError> {
    drive(Method::Dlra, oracle, f0, cfg, TraceDetail::Basic, None)
}

/// Like [`sni_run`] / [`dlra_run`] but also records the subspace errors
/// `||U U^T M - M||_F` and `||M V V^T - M||_F` each iteration when the target
/// is fully observed. The iterates are identical to the plain runs.
pub fn run_with_trace<G: GradientOracle>(
    method: Method,
    oracle: &G,
    f0: LowRankFactors,
    cfg: &SolverConfig,
) -> Result<(SvdResult, ConvergenceTrace), SolverError> {
    let result = drive(method, oracle, f0, cfg, TraceDetail::Full, None)?;
    let trace = result.trace.clone();
    Ok((result, trace))
}
