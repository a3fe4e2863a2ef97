//! Shared linear-algebra kernels: the dampened-Hessian Cholesky factor,
//! orthogonal projections, minimal-norm least squares, and the singular
//! value / projection-norm sequences the error bounds are built from.
//!
//! Everything is a pure function of its inputs; matrices can be shared
//! read-only across workers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative factor of the uniform rank cutoff: a singular value counts as
/// nonzero when it exceeds `max(rows, cols) * sigma_max * 1e-12`.
pub const RANK_TOL_FACTOR: f64 = 1e-12;

/// The calibration data: `m` samples stacked as rows over `N` features.
/// Entries are validated finite on construction and the column norms are
/// cached alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationMatrix {
    data: DMatrix<f64>,
    col_norms: Vec<f64>,
}

impl CalibrationMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::DimensionMismatch(
                "calibration matrix must have at least one row and one column".into(),
            ));
        }
        for col in 0..data.ncols() {
            for row in 0..data.nrows() {
                if !data[(row, col)].is_finite() {
                    return Err(Error::NonFiniteEntry { row, col });
                }
            }
        }
        let col_norms = (0..data.ncols()).map(|j| data.column(j).norm()).collect();
        Ok(Self { data, col_norms })
    }

    pub fn from_rows(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                entries.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, entries))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    /// Cached Euclidean norms of the columns.
    pub fn column_norms(&self) -> &[f64] {
        &self.col_norms
    }

    pub fn frobenius_norm_squared(&self) -> f64 {
        self.col_norms.iter().map(|n| n * n).sum()
    }

    /// Columns permuted so that column `k` of the result is column
    /// `perm[k]` of `self`.
    pub fn select_columns(&self, perm: &[usize]) -> CalibrationMatrix {
        let data = DMatrix::from_fn(self.nrows(), perm.len(), |i, k| self.data[(i, perm[k])]);
        CalibrationMatrix::new(data).expect("permutation of a valid matrix")
    }
}

/// The conventional dampening default `0.01 * ||X||_F^2 / N`.
pub fn auto_lambda(x: &CalibrationMatrix) -> f64 {
    0.01 * x.frobenius_norm_squared() / x.ncols() as f64
}

/// Stack `X` over `sqrt(lambda) * I`, giving the `(m+N) x N` matrix with
/// `Xhat^T Xhat = X^T X + lambda * I`.
pub fn augment(x: &CalibrationMatrix, lambda: f64) -> Result<CalibrationMatrix> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidLambda(lambda));
    }
    let (m, n) = (x.nrows(), x.ncols());
    let root = lambda.sqrt();
    let mut out = DMatrix::zeros(m + n, n);
    out.view_mut((0, 0), (m, n)).copy_from(x.matrix());
    for j in 0..n {
        out[(m + j, j)] = root;
    }
    CalibrationMatrix::new(out)
}

/// Lower-triangular `L` with `L L^T = (X^T X + lambda I)^{-1}`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
    lambda: f64,
}

impl CholeskyFactor {
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }
}

/// Factor the inverse dampened Hessian. Fails (rather than falling back)
/// when `X^T X + lambda I` is not numerically positive definite; the fix
/// is a larger dampening.
pub fn cholesky_inverse_hessian(x: &CalibrationMatrix, lambda: f64) -> Result<CholeskyFactor> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidLambda(lambda));
    }
    let n = x.ncols();
    let mut h = x.matrix().transpose() * x.matrix();
    for j in 0..n {
        h[(j, j)] += lambda;
    }
    let not_pd = || Error::NotPositiveDefinite {
        lambda,
        suggested: auto_lambda(x),
    };
    let chol = h.cholesky().ok_or_else(not_pd)?;
    let mut h_inv = chol.inverse();
    // symmetrize before the second factorization to shed round-off skew
    let h_inv_t = h_inv.transpose();
    h_inv = (h_inv + h_inv_t) * 0.5;
    let chol_inv = h_inv.cholesky().ok_or_else(not_pd)?;
    Ok(CholeskyFactor {
        l: chol_inv.l(),
        lambda,
    })
}

/// Uniform rank cutoff for an SVD with largest singular value `sigma_max`.
pub fn rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * RANK_TOL_FACTOR
}

struct ThinSvd {
    u: DMatrix<f64>,
    v_t: DMatrix<f64>,
    singular_values: DVector<f64>,
    tol: f64,
}

fn thin_svd(a: &DMatrix<f64>) -> ThinSvd {
    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = rank_tolerance(a.nrows(), a.ncols(), sigma_max);
    ThinSvd {
        u: svd.u.expect("u requested"),
        v_t: svd.v_t.expect("v_t requested"),
        singular_values: svd.singular_values,
        tol,
    }
}

/// Minimal-norm minimizer of `||A v - b||_2`, via SVD with the uniform
/// rank cutoff. An `A` with zero columns yields an empty solution.
pub fn ls_solve_minnorm(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = thin_svd(a);
    let mut coeffs = svd.u.transpose() * b;
    for (i, c) in coeffs.iter_mut().enumerate() {
        let s = svd.singular_values[i];
        *c = if s > svd.tol { *c / s } else { 0.0 };
    }
    svd.v_t.transpose() * coeffs
}

/// `P_{tail^perp} v = v - tail * tail^dagger * v`. An empty `tail` is the
/// identity projection.
pub fn project_residual(tail: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    if tail.ncols() == 0 {
        return v.clone();
    }
    let coeffs = ls_solve_minnorm(tail, v);
    v - tail * coeffs
}

/// Number of singular values above the uniform rank cutoff.
pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let sv = a.clone().svd(false, false).singular_values;
    let sigma_max = sv.iter().cloned().fold(0.0, f64::max);
    let tol = rank_tolerance(a.nrows(), a.ncols(), sigma_max);
    sv.iter().filter(|s| **s > tol).count()
}

/// Entry `j` (1-based) is the smallest nonzero singular value of the
/// trailing block `X_{>= j+1}`; zero when the block is empty or all-zero.
/// The last entry is zero by convention.
pub fn sigma_min_sequence(x: &CalibrationMatrix) -> Vec<f64> {
    let n = x.ncols();
    (0..n)
        .map(|j| {
            let width = n - j - 1;
            if width == 0 {
                return 0.0;
            }
            let tail = x.matrix().columns(j + 1, width).into_owned();
            let sv = tail.clone().svd(false, false).singular_values;
            let sigma_max = sv.iter().cloned().fold(0.0, f64::max);
            if sigma_max <= 0.0 {
                return 0.0;
            }
            let tol = rank_tolerance(tail.nrows(), tail.ncols(), sigma_max);
            // sigma_max itself always clears the cutoff, so the fold is finite
            sv.iter()
                .cloned()
                .filter(|s| *s > tol)
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Entry `j` (1-based) is `||P_{X_{>= j+1}^perp} X_j||_2`; the last entry
/// is `||X_N||_2` since its trailing block is empty.
pub fn projection_residual_norms(x: &CalibrationMatrix) -> Vec<f64> {
    let n = x.ncols();
    (0..n)
        .map(|j| {
            let tail = x.matrix().columns(j + 1, n - j - 1).into_owned();
            let col = x.matrix().column(j).into_owned();
            project_residual(&tail, &col).norm()
        })
        .collect()
}
