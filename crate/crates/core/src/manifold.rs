//! Points of the fixed-rank manifold in factored form `Y = U S V^T`, the
//! orthogonal projector onto a tangent space, and the factor-wise split of a
//! projected direction.
//!
//! `S` is any nonsingular `r × r` core; it is not kept diagonal. The tangent
//! space at `Y` is parameterized by `(dS, dU, dV)` under the gauge conditions
//! `U^T dU = 0` and `V^T dV = 0`:
//!
//! ```text
//! dY = dU S V^T + U dS V^T + U S dV^T
//! ```
//!
//! The extended map into so(r) × so(r) (rotations of the gauge) is never
//! needed by the integrators and is not modelled.

use nalgebra::LU;
use rand::Rng;

use crate::error::{Error, Result};
use crate::matcore::{
    ensure_finite, matmul_ordered, orthonormality_residual, random_orthonormal, small_svd,
    DenseMatrix, RANK_TOL_FACTOR,
};

/// Largest admitted `||Q^T Q - I||_F` for a factor with orthonormal columns.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// `Y = U S V^T` with `U` (m×r) and `V` (n×r) column-orthonormal and `S`
/// (r×r) nonsingular.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors {
    u: DenseMatrix,
    s: DenseMatrix,
    v: DenseMatrix,
}

impl LowRankFactors {
    /// Validates shapes, finiteness, orthonormality of `U` and `V` and
    /// nonsingularity of `S`.
    pub fn new(u: DenseMatrix, s: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        let r = s.nrows();
        if !s.is_square() || r == 0 {
            return Err(Error::DimensionMismatch {
                context: "core factor S",
                expected: (r.max(1), r.max(1)),
                got: s.shape(),
            });
        }
        if u.ncols() != r || u.nrows() < r {
            return Err(Error::DimensionMismatch {
                context: "left factor U",
                expected: (u.nrows().max(r), r),
                got: u.shape(),
            });
        }
        if v.ncols() != r || v.nrows() < r {
            return Err(Error::DimensionMismatch {
                context: "right factor V",
                expected: (v.nrows().max(r), r),
                got: v.shape(),
            });
        }
        ensure_finite(&u, "left factor U")?;
        ensure_finite(&s, "core factor S")?;
        ensure_finite(&v, "right factor V")?;
        let res_u = orthonormality_residual(&u);
        if res_u > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal("U", res_u));
        }
        let res_v = orthonormality_residual(&v);
        if res_v > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal("V", res_v));
        }
        let smin = *small_svd(&s)?.singular_values.last().expect("r >= 1");
        if smin <= 0.0 {
            return Err(Error::SingularCore {
                sigma_min: smin,
                tolerance: 0.0,
            });
        }
        Ok(Self { u, s, v })
    }

    /// Skips validation. Callers guarantee the invariants (QR outputs etc.).
    pub(crate) fn from_parts_unchecked(u: DenseMatrix, s: DenseMatrix, v: DenseMatrix) -> Self {
        debug_assert_eq!(u.ncols(), s.nrows());
        debug_assert_eq!(v.ncols(), s.ncols());
        Self { u, s, v }
    }

    /// Default starting point: Gaussian `m × r` and `n × r` matrices
    /// orthonormalized by thin QR, and `S = I_r`.
    pub fn random<R: Rng + ?Sized>(m: usize, n: usize, r: usize, rng: &mut R) -> Result<Self> {
        if r == 0 || r > m.min(n) {
            return Err(Error::InvalidConfig(format!(
                "rank {r} must satisfy 1 <= r <= min({m}, {n})"
            )));
        }
        let u = random_orthonormal(m, r, rng)?;
        let v = random_orthonormal(n, r, rng)?;
        Ok(Self::from_parts_unchecked(
            u,
            DenseMatrix::identity(r, r),
            v,
        ))
    }

    pub fn u(&self) -> &DenseMatrix {
        &self.u
    }

    pub fn s(&self) -> &DenseMatrix {
        &self.s
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.s.nrows()
    }

    /// `(m, n)` of the represented matrix.
    pub fn shape(&self) -> (usize, usize) {
        (self.u.nrows(), self.v.nrows())
    }

    pub fn into_parts(self) -> (DenseMatrix, DenseMatrix, DenseMatrix) {
        (self.u, self.s, self.v)
    }

    /// `U S`, formed with the ordered kernel shared by the residual paths.
    pub fn left_scaled(&self) -> DenseMatrix {
        matmul_ordered(&self.u, &self.s)
    }

    /// The dense `m × n` matrix `U S V^T`.
    pub fn assemble(&self) -> DenseMatrix {
        (&self.u * &self.s) * self.v.transpose()
    }

    pub(crate) fn check_target_shape(
        &self,
        context: &'static str,
        got: (usize, usize),
    ) -> Result<()> {
        if got != self.shape() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.shape(),
                got,
            });
        }
        Ok(())
    }
}

/// Factor-wise components `(dS, dU, dV)` of a tangent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentComponents {
    pub ds: DenseMatrix,
    pub du: DenseMatrix,
    pub dv: DenseMatrix,
}

impl TangentComponents {
    /// `dU S V^T + U dS V^T + U S dV^T`.
    pub fn tangent_vector(&self, at: &LowRankFactors) -> DenseMatrix {
        let (u, s, v) = (at.u(), at.s(), at.v());
        let left = &self.du * s + u * &self.ds;
        left * v.transpose() + (u * s) * self.dv.transpose()
    }

    /// `(||U^T dU||_F, ||V^T dV||_F)`.
    pub fn gauge_residuals(&self, at: &LowRankFactors) -> (f64, f64) {
        (
            at.u().tr_mul(&self.du).norm(),
            at.v().tr_mul(&self.dv).norm(),
        )
    }
}

/// Orthogonal projection of `b` onto the tangent space at `f`:
/// `U U^T B - U U^T B V V^T + B V V^T`, formed with thin products only.
pub fn tangent_project(f: &LowRankFactors, b: &DenseMatrix) -> Result<DenseMatrix> {
    f.check_target_shape("tangent_project", b.shape())?;
    let (u, v) = (f.u(), f.v());
    let ut_b = u.tr_mul(b);
    let b_v = b * v;
    let ut_b_v = &ut_b * v;
    let right = b_v - u * ut_b_v;
    Ok(u * ut_b + right * v.transpose())
}

/// Riemannian gradient components for the Euclidean direction `da`:
///
/// ```text
/// dS = U^T dA V
/// dU = (I - U U^T) dA V S^{-1}
/// dV = (I - V V^T) dA^T U S^{-T}
/// ```
///
/// `S^{-1}` is applied through LU solves.
pub fn riemannian_gradient_components(
    f: &LowRankFactors,
    da: &DenseMatrix,
) -> Result<TangentComponents> {
    f.check_target_shape("riemannian_gradient_components", da.shape())?;
    components_from_products(f, &(da * f.v()), &da.tr_mul(f.u()))
}

/// Gradient components from the precomputed thin products `dA V` and
/// `dA^T U`. Shared with the integrators, which form those products with
/// their own kernels.
pub(crate) fn components_from_products(
    f: &LowRankFactors,
    da_v: &DenseMatrix,
    dat_u: &DenseMatrix,
) -> Result<TangentComponents> {
    let (u, s, v) = (f.u(), f.s(), f.v());
    let r = f.rank();

    let sv = small_svd(s)?.singular_values;
    let tolerance = RANK_TOL_FACTOR * sv[0] * r as f64;
    let singular = || Error::SingularCore {
        sigma_min: sv[r - 1],
        tolerance,
    };
    if sv[r - 1] <= tolerance {
        return Err(singular());
    }

    let ds = u.tr_mul(da_v);
    let w_u = da_v - u * &ds;
    let w_v = dat_u - v * ds.transpose();

    // X S = W  <=>  S^T X^T = W^T, and X S^T = W  <=>  S X^T = W^T.
    let du = LU::new(s.transpose())
        .solve(&w_u.transpose())
        .ok_or_else(singular)?
        .transpose();
    let dv = LU::new(s.clone())
        .solve(&w_v.transpose())
        .ok_or_else(singular)?
        .transpose();
    Ok(TangentComponents { ds, du, dv })
}
