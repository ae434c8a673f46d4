//! Partially observed targets: `f1(Y) = 1/2 ||P_Omega(M) - P_Omega(Y)||_F^2`.
//!
//! The residual lives only on the observed positions, so the two thin
//! products an SNI step needs cost `O(|Omega| r)`. Observations are kept
//! sorted by `(row, col)` and every reduction walks them in that order; with
//! every position observed the arithmetic is the same, operation for
//! operation, as the dense path.

use crate::error::{Error, Result, SolverError};
use crate::integrators::{
    sni_run, sni_run_observed, GradientOracle, ObservationMode, Residual, SolverConfig, SvdResult,
};
use crate::manifold::LowRankFactors;
use crate::matcore::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl Observation {
    pub fn new(row: usize, col: usize, value: f64) -> Self {
        Self { row, col, value }
    }
}

/// Known entries of an `rows × cols` matrix, sorted by `(row, col)` with no
/// repeated position.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    rows: usize,
    cols: usize,
    entries: Vec<Observation>,
}

impl ObservationSet {
    /// Sorts `entries` and checks bounds, uniqueness and finiteness.
    pub fn new(rows: usize, cols: usize, mut entries: Vec<Observation>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidObservations(format!(
                "dimensions must be positive, got {rows}x{cols}"
            )));
        }
        entries.sort_by_key(|e| (e.row, e.col));
        for e in &entries {
            if e.row >= rows || e.col >= cols {
                return Err(Error::InvalidObservations(format!(
                    "position ({}, {}) outside {rows}x{cols}",
                    e.row, e.col
                )));
            }
            if !e.value.is_finite() {
                return Err(Error::InvalidObservations(format!(
                    "non-finite value at ({}, {})",
                    e.row, e.col
                )));
            }
        }
        if let Some(w) = entries
            .windows(2)
            .find(|w| (w[0].row, w[0].col) == (w[1].row, w[1].col))
        {
            return Err(Error::InvalidObservations(format!(
                "duplicate position ({}, {})",
                w[0].row, w[0].col
            )));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    /// Every entry of `m`.
    pub fn full(m: &DenseMatrix) -> Self {
        Self::masked(m, |_, _| true)
    }

    /// Entries of `m` at positions where `keep(row, col)` holds.
    pub fn masked(m: &DenseMatrix, mut keep: impl FnMut(usize, usize) -> bool) -> Self {
        let (rows, cols) = m.shape();
        let mut entries = Vec::new();
        for i in 0..rows {
            for j in 0..cols {
                if keep(i, j) {
                    entries.push(Observation::new(i, j, m[(i, j)]));
                }
            }
        }
        Self {
            rows,
            cols,
            entries,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Observation] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = &Observation> {
        self.entries.iter()
    }

    /// Same positions with every value shifted by `-offset`.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .map(|e| Observation::new(e.row, e.col, e.value - offset))
                .collect(),
        }
    }

    /// Mean of the observed values, `None` when empty.
    pub fn mean(&self) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        Some(self.entries.iter().map(|e| e.value).sum::<f64>() / self.len() as f64)
    }

    fn check_factors(&self, f: &LowRankFactors, context: &'static str) -> Result<()> {
        if f.shape() != self.shape() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.shape(),
                got: f.shape(),
            });
        }
        Ok(())
    }
}

/// `(U S)_{i,:} . V_{j,:}`, summed over the rank index in ascending order.
fn predict(us: &DenseMatrix, v: &DenseMatrix, i: usize, j: usize) -> f64 {
    let mut acc = 0.0;
    for k in 0..us.ncols() {
        acc += us[(i, k)] * v[(j, k)];
    }
    acc
}

/// Residual `P_Omega(M - Y)` stored on the observed positions only.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseResidual {
    rows: usize,
    cols: usize,
    entries: Vec<Observation>,
}

impl SparseResidual {
    pub fn entries(&self) -> &[Observation] {
        &self.entries
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for e in &self.entries {
            out[(e.row, e.col)] = e.value;
        }
        out
    }

    pub fn squared_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.value * e.value).sum()
    }
}

impl Residual for SparseResidual {
    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn mul_right(&self, v: &DenseMatrix) -> DenseMatrix {
        let r = v.ncols();
        let mut out = DenseMatrix::zeros(self.rows, r);
        for e in &self.entries {
            for k in 0..r {
                out[(e.row, k)] += e.value * v[(e.col, k)];
            }
        }
        out
    }

    fn tr_mul_right(&self, u: &DenseMatrix) -> DenseMatrix {
        let r = u.ncols();
        let mut out = DenseMatrix::zeros(self.cols, r);
        for e in &self.entries {
            for k in 0..r {
                out[(e.col, k)] += e.value * u[(e.row, k)];
            }
        }
        out
    }
}

/// `M_ij - (U S V^T)_ij` on every observed position, each prediction in
/// `O(r)` without forming `Y`.
pub fn sparse_residual(obs: &ObservationSet, f: &LowRankFactors) -> Result<SparseResidual> {
    obs.check_factors(f, "sparse_residual")?;
    Ok(residual_unchecked(obs, f))
}

fn residual_unchecked(obs: &ObservationSet, f: &LowRankFactors) -> SparseResidual {
    let us = f.left_scaled();
    let v = f.v();
    SparseResidual {
        rows: obs.rows,
        cols: obs.cols,
        entries: obs
            .entries
            .iter()
            .map(|e| Observation::new(e.row, e.col, e.value - predict(&us, v, e.row, e.col)))
            .collect(),
    }
}

/// `1/2 sum_Omega (M_ij - Y_ij)^2`.
pub fn objective_f1(obs: &ObservationSet, f: &LowRankFactors) -> Result<f64> {
    Ok(0.5 * sparse_residual(obs, f)?.squared_norm())
}

/// Gradient oracle for `f1` over an observation set.
#[derive(Debug, Clone, Copy)]
pub struct CompletionTarget<'a> {
    obs: &'a ObservationSet,
}

impl<'a> CompletionTarget<'a> {
    pub fn new(obs: &'a ObservationSet) -> Self {
        Self { obs }
    }
}

impl GradientOracle for CompletionTarget<'_> {
    type Residual = SparseResidual;

    fn shape(&self) -> (usize, usize) {
        self.obs.shape()
    }

    fn mode(&self) -> ObservationMode {
        ObservationMode::PartialObservation
    }

    fn residual(&self, at: &LowRankFactors) -> SparseResidual {
        residual_unchecked(self.obs, at)
    }

    fn objective(&self, residual: &SparseResidual) -> f64 {
        0.5 * residual.squared_norm()
    }
}

/// SNI on `f1`. Same step as the fully observed solver; the trace records
/// `f1` per iteration and the run also stops once the relative change of
/// `f1` drops below `cfg.objective_floor`.
pub fn sni_complete(
    obs: &ObservationSet,
    f0: LowRankFactors,
    cfg: &SolverConfig,
) -> Result<SvdResult, SolverError> {
    let cfg = SolverConfig {
        mode: ObservationMode::PartialObservation,
        ..cfg.clone()
    };
    sni_run(&CompletionTarget::new(obs), f0, &cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionScore {
    pub rmse: f64,
    pub count: usize,
}

/// RMSE of `U S V^T` over the test entries. With `clamp = Some((lo, hi))`
/// predictions are clipped to `[lo, hi]` before scoring.
pub fn evaluate_rmse(
    test: &ObservationSet,
    f: &LowRankFactors,
    clamp: Option<(f64, f64)>,
) -> Result<PredictionScore> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    test.check_factors(f, "evaluate_rmse")?;
    let us = f.left_scaled();
    let sum: f64 = test
        .iter()
        .map(|e| {
            let mut pred = predict(&us, f.v(), e.row, e.col);
            if let Some((lo, hi)) = clamp {
                pred = pred.clamp(lo, hi);
            }
            (pred - e.value).powi(2)
        })
        .sum();
    Ok(PredictionScore {
        rmse: (sum / test.len() as f64).sqrt(),
        count: test.len(),
    })
}

/// Iteration budget picked on a validation set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopChoice {
    /// Best-scoring iteration, at least 1.
    pub iterations: usize,
    pub validation_rmse: f64,
    /// Iterations run before the search stopped.
    pub explored: usize,
}

/// Runs [`sni_complete`] on `fit`, scoring each iterate's (optionally
/// clamped) RMSE on `validation`, until the score has not improved for
/// `patience` iterations or a regular stopping rule fires.
pub fn select_iterations(
    fit: &ObservationSet,
    validation: &ObservationSet,
    f0: LowRankFactors,
    cfg: &SolverConfig,
    clamp: Option<(f64, f64)>,
    patience: usize,
) -> Result<EarlyStopChoice> {
    if validation.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    validation.check_factors(&f0, "select_iterations")?;
    let mut best = (0usize, f64::INFINITY);
    let mut failure = None;
    let mut observe = |i: usize, f: &LowRankFactors| match evaluate_rmse(validation, f, clamp) {
        Ok(score) => {
            if score.rmse < best.1 {
                best = (i, score.rmse);
            }
            i - best.0 >= patience.max(1)
        }
        Err(e) => {
            failure = Some(e);
            true
        }
    };
    let cfg = SolverConfig {
        mode: ObservationMode::PartialObservation,
        ..cfg.clone()
    };
    let run = sni_run_observed(&CompletionTarget::new(fit), f0, &cfg, &mut observe)
        .map_err(|e| e.error)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(EarlyStopChoice {
        iterations: best.0.max(1),
        validation_rmse: best.1,
        explored: run.iterations,
    })
}
