//! Reference methods for the comparison harness: block power (subspace)
//! iteration and the randomized SVD. Both return the same [`SvdResult`] as
//! the integrators so callers can score them uniformly.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::integrators::{ConvergenceTrace, ObservationMode, StopReason, SvdResult, TraceRecord};
use crate::matcore::{
    ensure_finite, fro_norm, gaussian_matrix, orthonormal_basis, random_orthonormal, seeded_rng,
    sigma_min, small_svd, thin_qr, DenseMatrix,
};

/// Default RSVD oversampling.
pub const DEFAULT_OVERSAMPLE: usize = 10;
/// Default RSVD power iterations.
pub const DEFAULT_POWER_ITERS: usize = 1;

/// Number of power sweeps costing as many `m x n x r`-sized products as a
/// randomized SVD with oversampling `p` and `q` power iterations.
///
/// The RSVD forms `2q + 2` products of `M` (or `M^T`) with `r + p` columns;
/// a power sweep forms two products with `r` columns.
pub fn matched_power_sweeps(r: usize, p: usize, q: usize) -> usize {
    let rsvd = (2 * q + 2) * (r + p);
    rsvd.div_ceil(2 * r).max(1)
}

fn check_rank(m: &DenseMatrix, k: usize, what: &str) -> Result<()> {
    let (rows, cols) = m.shape();
    if k == 0 || k > rows.min(cols) {
        return Err(Error::InvalidConfig(format!(
            "{what} {k} must lie in 1..={} for a {rows}x{cols} matrix",
            rows.min(cols)
        )));
    }
    Ok(())
}

fn record(iteration: usize, objective: f64, sigma: Option<f64>, start: Instant) -> TraceRecord {
    TraceRecord {
        iteration,
        objective,
        u_subspace_error: None,
        v_subspace_error: None,
        sigma_min: sigma,
        elapsed: start.elapsed(),
    }
}

/// Rank-`r` approximation of `M` by `iters` sweeps of block power iteration
/// from a seeded random orthonormal start.
pub fn power_iteration(m: &DenseMatrix, r: usize, iters: usize, seed: u64) -> Result<SvdResult> {
    check_rank(m, r, "rank")?;
    let mut rng = seeded_rng(seed);
    let v0 = random_orthonormal(m.ncols(), r, &mut rng)?;
    power_iteration_from(m, &v0, iters)
}

/// Block power iteration from the right starting basis `v0`.
///
/// Each sweep sets `U = orth(M V)` then `V = orth(M^T U)`. The trace records,
/// per sweep, `||M - U (U^T M V) V^T||_F` and `sigma_min(V_prev^T V)`; its
/// initial record is `||M||_F` (the zero approximation).
pub fn power_iteration_from(m: &DenseMatrix, v0: &DenseMatrix, iters: usize) -> Result<SvdResult> {
    ensure_finite(m, "target matrix")?;
    let r = v0.ncols();
    check_rank(m, r, "rank")?;
    if v0.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            context: "power iteration start",
            expected: (m.ncols(), r),
            got: v0.shape(),
        });
    }
    if iters == 0 {
        return Err(Error::InvalidConfig(
            "power iteration needs at least one sweep".into(),
        ));
    }
    let start = Instant::now();
    let mut trace = ConvergenceTrace {
        mode: ObservationMode::FullObservation,
        initial: record(0, fro_norm(m), None, start),
        records: Vec::with_capacity(iters),
    };

    let mut v = thin_qr(v0)?.q;
    let mut u = DenseMatrix::zeros(m.nrows(), r);
    let mut core = DenseMatrix::zeros(r, r);
    for i in 1..=iters {
        u = thin_qr(&(m * &v))?.q;
        let w = m.tr_mul(&u);
        let v_next = thin_qr(&w)?.q;
        core = w.tr_mul(&v_next);
        let sigma = sigma_min(&v.tr_mul(&v_next));
        v = v_next;
        let objective = fro_norm(&(m - &u * &core * v.transpose()));
        trace.records.push(record(i, objective, Some(sigma), start));
    }

    let svd = small_svd(&core)?;
    Ok(SvdResult {
        u: u * svd.u,
        singular_values: svd.singular_values,
        v: v * svd.v,
        trace,
        converged: true,
        stop_reason: StopReason::BudgetCompleted,
        iterations: iters,
    })
}

/// Randomized SVD: sketch the range of `(M M^T)^q M G` with Gaussian `G` of
/// width `r + p`, project `M` onto it and truncate the small SVD to rank `r`.
///
/// Power iterations re-orthonormalize between products, which spans the same
/// range in exact arithmetic and avoids losing the small directions.
pub fn randomized_svd(
    m: &DenseMatrix,
    r: usize,
    oversample: usize,
    power_iters: usize,
    seed: u64,
) -> Result<SvdResult> {
    ensure_finite(m, "target matrix")?;
    check_rank(m, r, "rank")?;
    let width = r + oversample;
    check_rank(m, width, "rank plus oversampling")?;
    let start = Instant::now();
    let initial = record(0, fro_norm(m), None, start);

    let mut rng = seeded_rng(seed);
    let g = gaussian_matrix(m.ncols(), width, &mut rng);
    let mut q = orthonormal_basis(&(m * g))?;
    for _ in 0..power_iters {
        let z = orthonormal_basis(&m.tr_mul(&q))?;
        q = orthonormal_basis(&(m * z))?;
    }

    // B = Q^T M is wide; factor B^T = Q_b R_b so that B = R_b^T Q_b^T.
    let bt = m.tr_mul(&q);
    let qb = orthonormal_basis(&bt)?;
    let rb_t = bt.tr_mul(&qb);
    let svd = small_svd(&rb_t)?;
    let u = (q * svd.u).columns(0, r).into_owned();
    let v = (qb * svd.v).columns(0, r).into_owned();
    let singular_values = svd.singular_values[..r].to_vec();

    let mut us = u.clone();
    for (j, &d) in singular_values.iter().enumerate() {
        us.column_mut(j).scale_mut(d);
    }
    let objective = fro_norm(&(m - us * v.transpose()));
    let trace = ConvergenceTrace {
        mode: ObservationMode::FullObservation,
        initial,
        records: vec![record(1, objective, None, start)],
    };
    Ok(SvdResult {
        u,
        singular_values,
        v,
        trace,
        converged: true,
        stop_reason: StopReason::BudgetCompleted,
        iterations: 1,
    })
}
