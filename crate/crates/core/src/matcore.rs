//! Dense linear-algebra kernels shared by every solver: thin Householder QR
//! with a positive-diagonal convention, a one-sided Jacobi SVD for the small
//! r×r cores, and norms.
//!
//! Everything here is a pure function of its input. Loops run in a fixed
//! order so that identical inputs produce identical output bits.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Dense real matrix. Storage is nalgebra's column-major layout; indexing is
/// `(row, col)`.
pub type DenseMatrix = DMatrix<f64>;

/// Largest core dimension accepted by [`small_svd`].
pub const SMALL_SVD_CAP: usize = 4096;

/// Relative factor of the numerical-rank threshold used by [`thin_qr`]:
/// a column set is deficient when `sigma_min <= RANK_TOL_FACTOR * ||K||_2 * r`.
pub const RANK_TOL_FACTOR: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 80;

/// Seeded generator used by every randomized routine in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matrix of independent standard normal entries, drawn in column-major order.
pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    DenseMatrix::from_vec(rows, cols, data)
}

/// Random `rows × cols` matrix with orthonormal columns (QR of a Gaussian).
pub fn random_orthonormal<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Result<DenseMatrix> {
    Ok(thin_qr(&gaussian_matrix(rows, cols, rng))?.q)
}

pub fn ensure_finite(a: &DenseMatrix, context: &'static str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

/// Frobenius norm, `sqrt(sum a_ij^2)`.
pub fn fro_norm(a: &DenseMatrix) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `||Q^T Q - I||_F`.
pub fn orthonormality_residual(q: &DenseMatrix) -> f64 {
    let gram = q.tr_mul(q);
    fro_norm(&(gram - DenseMatrix::identity(q.ncols(), q.ncols())))
}

/// `a * b` where every output entry is accumulated over the inner index in
/// ascending order, starting from zero. The sparse residual kernels follow the
/// same order, which makes dense and fully observed sparse runs bit-identical.
pub fn matmul_ordered(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(
        a.ncols(),
        b.nrows(),
        "matmul_ordered: inner dimensions differ"
    );
    let (m, inner) = a.shape();
    let k = b.ncols();
    let mut out = DenseMatrix::zeros(m, k);
    let a_data = a.as_slice();
    for col in 0..k {
        let out_col = &mut out.as_mut_slice()[col * m..(col + 1) * m];
        for j in 0..inner {
            let coeff = b[(j, col)];
            let a_col = &a_data[j * m..(j + 1) * m];
            for (o, &x) in out_col.iter_mut().zip(a_col) {
                *o += x * coeff;
            }
        }
    }
    out
}

/// `a^T * b`, accumulated over the shared row index in ascending order.
pub fn tr_matmul_ordered(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.nrows(), b.nrows(), "tr_matmul_ordered: row counts differ");
    let m = a.nrows();
    let (p, k) = (a.ncols(), b.ncols());
    let mut out = DenseMatrix::zeros(p, k);
    let (a_data, b_data) = (a.as_slice(), b.as_slice());
    for col in 0..k {
        let b_col = &b_data[col * m..(col + 1) * m];
        for j in 0..p {
            let a_col = &a_data[j * m..(j + 1) * m];
            let mut acc = 0.0;
            for (&x, &y) in a_col.iter().zip(b_col) {
                acc += x * y;
            }
            out[(j, col)] = acc;
        }
    }
    out
}

/// Thin QR factors `K = Q R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinQr {
    /// `m × r`, orthonormal columns.
    pub q: DenseMatrix,
    /// `r × r`, upper triangular with a strictly positive diagonal.
    pub r: DenseMatrix,
}

/// Householder thin QR of an `m × r` matrix (`m >= r`).
///
/// The diagonal of `R` is made positive, which pins the factorization down
/// uniquely for full-rank input. Fails with [`Error::RankDeficient`] when
/// `sigma_min(K) <= 1e-12 * ||K||_2 * r`.
pub fn thin_qr(k: &DenseMatrix) -> Result<ThinQr> {
    let qr = householder_qr(k)?;
    let r = qr.r.ncols();
    let sv = small_svd(&qr.r)?.singular_values;
    let (smax, smin) = (sv[0], sv[r - 1]);
    let tolerance = RANK_TOL_FACTOR * smax * r as f64;
    if smin <= tolerance {
        return Err(Error::RankDeficient {
            rank: r,
            sigma_min: smin,
            tolerance,
        });
    }
    Ok(qr)
}

/// Orthonormal `m × r` basis whose span contains the column space of `k`,
/// without the rank check of [`thin_qr`]. Used for randomized sketches, which
/// may legitimately have lower rank than their column count.
pub fn orthonormal_basis(k: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(householder_qr(k)?.q)
}

fn householder_qr(k: &DenseMatrix) -> Result<ThinQr> {
    let (m, r) = k.shape();
    if r == 0 || m < r {
        return Err(Error::DimensionMismatch {
            context: "thin_qr (need rows >= cols >= 1)",
            expected: (r.max(1), r.max(1)),
            got: (m, r),
        });
    }
    ensure_finite(k, "thin_qr input")?;

    let mut a = k.as_slice().to_vec();
    // Householder vectors, stored for rows j..m of reflector j.
    let mut reflectors: Vec<Option<(Vec<f64>, f64)>> = Vec::with_capacity(r);
    for j in 0..r {
        let (head, tail) = a.split_at_mut((j + 1) * m);
        let col = &mut head[j * m + j..];
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            reflectors.push(None);
            continue;
        }
        let alpha = if col[0] >= 0.0 { -norm } else { norm };
        let mut v = col.to_vec();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        for c in 0..(r - j - 1) {
            let target = &mut tail[c * m + j..(c + 1) * m];
            let dot: f64 = v.iter().zip(target.iter()).map(|(x, y)| x * y).sum();
            let scale = 2.0 * dot / vv;
            for (t, &x) in target.iter_mut().zip(&v) {
                *t -= scale * x;
            }
        }
        col[0] = alpha;
        for x in &mut col[1..] {
            *x = 0.0;
        }
        reflectors.push(Some((v, vv)));
    }

    let mut rmat = DenseMatrix::zeros(r, r);
    for c in 0..r {
        for i in 0..=c {
            rmat[(i, c)] = a[c * m + i];
        }
    }

    // Backward accumulation of Q = H_0 H_1 ... H_{r-1} [I_r; 0].
    let mut q = DenseMatrix::zeros(m, r);
    for c in 0..r {
        q[(c, c)] = 1.0;
    }
    let qs = q.as_mut_slice();
    for j in (0..r).rev() {
        if let Some((v, vv)) = &reflectors[j] {
            for c in j..r {
                let target = &mut qs[c * m + j..(c + 1) * m];
                let dot: f64 = v.iter().zip(target.iter()).map(|(x, y)| x * y).sum();
                let scale = 2.0 * dot / vv;
                for (t, &x) in target.iter_mut().zip(v) {
                    *t -= scale * x;
                }
            }
        }
    }

    for j in 0..r {
        if rmat[(j, j)] < 0.0 {
            for c in j..r {
                rmat[(j, c)] = -rmat[(j, c)];
            }
            for x in q.column_mut(j).iter_mut() {
                *x = -*x;
            }
        }
    }

    Ok(ThinQr { q, r: rmat })
}

/// SVD of a small square core, `S = U diag(d) V^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallSvd {
    pub u: DenseMatrix,
    /// Nonnegative, sorted descending.
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
}

impl SmallSvd {
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for (j, &s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        us * self.v.transpose()
    }
}

/// One-sided (Hestenes) Jacobi SVD of a square matrix of order at most
/// [`SMALL_SVD_CAP`].
///
/// Columns are rotated pairwise until mutually orthogonal; the column norms
/// are then the singular values. Exactly zero columns get left singular
/// vectors completed from the standard basis.
pub fn small_svd(s: &DenseMatrix) -> Result<SmallSvd> {
    let n = s.nrows();
    if n != s.ncols() || n == 0 {
        return Err(Error::DimensionMismatch {
            context: "small_svd (square input required)",
            expected: (n.max(1), n.max(1)),
            got: s.shape(),
        });
    }
    if n > SMALL_SVD_CAP {
        return Err(Error::InvalidConfig(format!(
            "small_svd dimension {n} exceeds cap {SMALL_SVD_CAP}"
        )));
    }
    ensure_finite(s, "small_svd input")?;

    let mut w = s.as_slice().to_vec();
    let mut v = DenseMatrix::identity(n, n).as_slice().to_vec();
    let tol = f64::EPSILON * n as f64;

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (cp, cq) = (&w[p * n..(p + 1) * n], &w[q * n..(q + 1) * n]);
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for (x, y) in cp.iter().zip(cq) {
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta.abs() > 1e150 {
                    0.5 / zeta
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                if t == 0.0 {
                    continue;
                }
                rotated = true;
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                rotate_columns(&mut w, n, p, q, c, sn);
                rotate_columns(&mut v, n, p, q, c, sn);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..n)
        .map(|j| {
            w[j * n..(j + 1) * n]
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));

    let mut u = DenseMatrix::zeros(n, n);
    let mut vs = DenseMatrix::zeros(n, n);
    let mut singular_values = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        singular_values.push(sigma);
        for i in 0..n {
            vs[(i, dst)] = v[src * n + i];
        }
        if sigma > 0.0 && sigma.is_normal() {
            for i in 0..n {
                u[(i, dst)] = w[src * n + i] / sigma;
            }
        } else {
            missing.push(dst);
        }
    }
    complete_basis(&mut u, &missing);
    Ok(SmallSvd {
        u,
        singular_values,
        v: vs,
    })
}

fn rotate_columns(a: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..n {
        let x = a[p * n + i];
        let y = a[q * n + i];
        a[p * n + i] = c * x - s * y;
        a[q * n + i] = s * x + c * y;
    }
}

/// Fill the listed columns of `u` with unit vectors orthogonal to all other
/// filled columns, trying standard basis vectors in order.
fn complete_basis(u: &mut DenseMatrix, missing: &[usize]) {
    let n = u.nrows();
    let mut filled: Vec<bool> = (0..u.ncols()).map(|j| !missing.contains(&j)).collect();
    let mut candidate = 0;
    for &j in missing {
        loop {
            assert!(candidate < n, "basis completion ran out of candidates");
            let mut x = nalgebra::DVector::<f64>::zeros(n);
            x[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (c, _) in filled.iter().enumerate().filter(|(_, f)| **f) {
                    let col = u.column(c);
                    let d = col.dot(&x);
                    x.axpy(-d, &col, 1.0);
                }
            }
            let norm = x.norm();
            if norm > 0.5 {
                u.set_column(j, &(x / norm));
                filled[j] = true;
                break;
            }
        }
    }
}

/// Smallest singular value of a square matrix. Panics on non-square input.
pub fn sigma_min(a: &DenseMatrix) -> f64 {
    assert!(a.is_square(), "sigma_min requires a square matrix");
    match small_svd(a) {
        Ok(svd) => *svd.singular_values.last().expect("nonempty"),
        Err(_) => f64::NAN,
    }
}

/// Spectral norm of a matrix whose smaller dimension fits the small-SVD cap.
pub fn spectral_norm(a: &DenseMatrix) -> f64 {
    let gram = if a.nrows() >= a.ncols() {
        a.tr_mul(a)
    } else {
        a * a.transpose()
    };
    small_svd(&gram)
        .map(|svd| svd.singular_values[0].sqrt())
        .unwrap_or(f64::NAN)
}
