//! Rank-revealing dense kernels built on a single SVD.
//!
//! Every routine accepts zero-dimension matrices. Rank decisions use a
//! relative threshold `rank_tol * max(sigma_max, reference)`, where the
//! optional `reference` norm lets a caller that formed the matrix from
//! larger operands (products, projections) keep rounding noise from being
//! counted as rank.

use nalgebra::{DMatrix, DVector};

use crate::error::KernelError;

/// Default relative tolerance for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Orthonormal split of the domain of a `p x m` matrix `A` into the row
/// space (`range_basis`, spans range of `A^T`) and the null space
/// (`null_basis`).
///
/// The left singular vectors and singular values belonging to the range
/// are kept so that the pseudo-inverse of `A * range_basis` and the
/// projector onto its left kernel come out of the same factorization.
#[derive(Debug, Clone)]
pub struct RangeNullSplit {
    pub range_basis: DMatrix<f64>,
    pub null_basis: DMatrix<f64>,
    pub rank: usize,
    left_basis: DMatrix<f64>,
    singular_values: DVector<f64>,
}

impl RangeNullSplit {
    /// Number of columns of the decomposed matrix.
    pub fn dim(&self) -> usize {
        self.range_basis.nrows()
    }

    pub fn nullity(&self) -> usize {
        self.null_basis.ncols()
    }

    /// Orthonormal basis (`p x r`) of the column space of `A`.
    pub fn left_basis(&self) -> &DMatrix<f64> {
        &self.left_basis
    }

    /// The `r` retained singular values, descending.
    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    /// `(A * range_basis)^+`, an `r x p` matrix.
    ///
    /// `A * range_basis = U_r * S_r`, so the pseudo-inverse is `S_r^-1 U_r^T`.
    pub fn range_pseudo_inverse(&self) -> DMatrix<f64> {
        let mut pinv = self.left_basis.transpose();
        for (i, s) in self.singular_values.iter().enumerate() {
            pinv.row_mut(i).scale_mut(1.0 / s);
        }
        pinv
    }

    /// Applies `I - (A P)(A P)^+ = I - U_r U_r^T` to the columns of `rhs`.
    pub fn project_out_range(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        if self.rank == 0 {
            return rhs.clone();
        }
        let coeffs = self.left_basis.tr_mul(rhs);
        rhs - &self.left_basis * coeffs
    }
}

fn check_finite(a: &DMatrix<f64>) -> Result<(), KernelError> {
    match a.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(idx) => Err(KernelError::NonFinite {
            row: idx % a.nrows().max(1),
            col: idx / a.nrows().max(1),
        }),
    }
}

fn check_tol(rank_tol: f64) -> Result<(), KernelError> {
    if rank_tol > 0.0 && rank_tol.is_finite() {
        Ok(())
    } else {
        Err(KernelError::InvalidTolerance(rank_tol))
    }
}

/// Full SVD pieces: `u` is `p x p`, `v` is `q x q`, singular values
/// descending.
struct FullSvd {
    u: DMatrix<f64>,
    s: DVector<f64>,
    v: DMatrix<f64>,
}

fn to_nalgebra(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn as_faer(a: &DMatrix<f64>) -> faer::MatRef<'_, f64> {
    faer::MatRef::from_column_major_slice(a.as_slice(), a.nrows(), a.ncols())
}

fn full_svd(a: &DMatrix<f64>) -> Result<FullSvd, KernelError> {
    let svd = as_faer(a).svd().map_err(|_| KernelError::NoConvergence)?;
    let s = svd.S().column_vector();
    Ok(FullSvd {
        u: to_nalgebra(svd.U()),
        s: DVector::from_fn(s.nrows(), |i, _| s[i]),
        v: to_nalgebra(svd.V()),
    })
}

fn singular_values(a: &DMatrix<f64>) -> Result<DVector<f64>, KernelError> {
    let s = as_faer(a).singular_values().map_err(|_| KernelError::NoConvergence)?;
    Ok(DVector::from_vec(s))
}

fn count_rank(s: &DVector<f64>, rank_tol: f64, reference: f64) -> usize {
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let thresh = rank_tol * smax.max(reference);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > thresh).count()
}

/// Numerical rank of `a` using the relative threshold `rank_tol * sigma_max`.
pub fn rank(a: &DMatrix<f64>, rank_tol: f64) -> Result<usize, KernelError> {
    rank_with_reference(a, rank_tol, 0.0)
}

pub fn rank_with_reference(a: &DMatrix<f64>, rank_tol: f64, reference: f64) -> Result<usize, KernelError> {
    check_tol(rank_tol)?;
    check_finite(a)?;
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(0);
    }
    let s = singular_values(a)?;
    Ok(count_rank(&s, rank_tol, reference))
}

/// Splits the domain of `a` into row space and null space.
pub fn range_null_decompose(a: &DMatrix<f64>, rank_tol: f64) -> Result<RangeNullSplit, KernelError> {
    range_null_decompose_with_reference(a, rank_tol, 0.0)
}

/// Like [`range_null_decompose`] with the threshold floored at
/// `rank_tol * reference`.
pub fn range_null_decompose_with_reference(
    a: &DMatrix<f64>,
    rank_tol: f64,
    reference: f64,
) -> Result<RangeNullSplit, KernelError> {
    check_tol(rank_tol)?;
    check_finite(a)?;
    let (p, m) = a.shape();
    if m == 0 {
        return Err(KernelError::EmptyDomain);
    }
    if p == 0 {
        return Ok(RangeNullSplit {
            range_basis: DMatrix::zeros(m, 0),
            null_basis: DMatrix::identity(m, m),
            rank: 0,
            left_basis: DMatrix::zeros(0, 0),
            singular_values: DVector::zeros(0),
        });
    }
    let FullSvd { u, s, v } = full_svd(a)?;
    let r = count_rank(&s, rank_tol, reference);
    if r == 0 {
        return Ok(RangeNullSplit {
            range_basis: DMatrix::zeros(m, 0),
            null_basis: DMatrix::identity(m, m),
            rank: 0,
            left_basis: DMatrix::zeros(p, 0),
            singular_values: DVector::zeros(0),
        });
    }
    Ok(RangeNullSplit {
        range_basis: v.columns(0, r).into_owned(),
        null_basis: v.columns(r, m - r).into_owned(),
        rank: r,
        left_basis: u.columns(0, r).into_owned(),
        singular_values: s.rows(0, r).into_owned(),
    })
}

/// Moore-Penrose pseudo-inverse with singular values at or below
/// `rank_tol * sigma_max` truncated.
pub fn pseudo_inverse(a: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>, KernelError> {
    check_tol(rank_tol)?;
    check_finite(a)?;
    let (p, q) = a.shape();
    if p == 0 || q == 0 {
        return Ok(DMatrix::zeros(q, p));
    }
    let FullSvd { u, s, v } = full_svd(a)?;
    let r = count_rank(&s, rank_tol, 0.0);
    let mut out = DMatrix::zeros(q, p);
    for i in 0..r {
        out += (v.column(i) / s[i]) * u.column(i).transpose();
    }
    Ok(out)
}

/// Replaces the rows of `m` with an orthonormal basis of its row space.
pub fn compress_rows(m: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>, KernelError> {
    compress_rows_with_reference(m, rank_tol, 0.0)
}

pub fn compress_rows_with_reference(
    m: &DMatrix<f64>,
    rank_tol: f64,
    reference: f64,
) -> Result<DMatrix<f64>, KernelError> {
    check_tol(rank_tol)?;
    check_finite(m)?;
    let (p, cols) = m.shape();
    if p == 0 || cols == 0 {
        return Ok(DMatrix::zeros(0, cols));
    }
    let FullSvd { s, v, .. } = full_svd(m)?;
    let r = count_rank(&s, rank_tol, reference);
    Ok(v.columns(0, r).transpose())
}
