//! Worst-case instances for deterministic greedy quantization: square
//! systems `X = H^T R` on which the entry-wise output error grows like
//! `sqrt(N)` and the weight drift like `N`, despite `||w||_inf < 1`.
//!
//! `H` is an orthonormal Hadamard basis and `R` a unit lower bidiagonal
//! matrix. The preround values the algorithm produces on such an `X`
//! satisfy `v = R(w - Q(v)) + Q(v)`, so picking `v - q = beta * H_j`
//! forces `X(w - q) = beta * e_j` while `w - q = beta * R^{-1} H_j`
//! stacks up linearly. With the all-ones Hadamard column and `-1` on the
//! subdiagonal, `R^{-1} H_j` is exactly `(1, 2, ..., N) / sqrt(N)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linops::CalibrationMatrix;
use crate::optq::{optq_column, Formulation, Lambda, QuantConfig};
use crate::Alphabet;

/// One constructed instance, with the output the quantizer must
/// reproduce and the drift scale `beta = sqrt(N)/3`.
#[derive(Debug, Clone)]
pub struct AdversarialInstance {
    pub x: CalibrationMatrix,
    pub w: DVector<f64>,
    pub expected_q: DVector<f64>,
    pub beta: f64,
    /// 1-based Hadamard column the drift is aligned with.
    pub column_index: usize,
}

/// Column-normalized Sylvester Hadamard matrix: entries `±1/sqrt(N)`,
/// orthonormal. `N` must be a power of two.
pub fn hadamard(n: usize) -> Result<DMatrix<f64>> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut signs = DMatrix::from_element(n, n, 1.0);
    let mut size = 1;
    while size < n {
        for i in 0..size {
            for j in 0..size {
                let s = signs[(i, j)];
                signs[(i + size, j)] = s;
                signs[(i, j + size)] = s;
                signs[(i + size, j + size)] = -s;
            }
        }
        size *= 2;
    }
    Ok(signs / (n as f64).sqrt())
}

/// Unit lower bidiagonal `R` with `-1` on the first subdiagonal; its
/// inverse is the all-ones lower triangle.
fn bidiagonal_r(n: usize) -> DMatrix<f64> {
    let mut r = DMatrix::identity(n, n);
    for i in 1..n {
        r[(i, i - 1)] = -1.0;
    }
    r
}

/// Build the size-`n` instance (unit step, infinite grid): `j = 1`,
/// `beta = sqrt(n)/3`, `q = -round(beta R^{-1} H_1)`,
/// `w = beta R^{-1} H_1 + q`, so `w - q = (1, 2, ..., n) / 3`.
pub fn build_instance(n: usize) -> Result<AdversarialInstance> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let h = hadamard(n)?;
    let r = bidiagonal_r(n);
    let beta = (n as f64).sqrt() / 3.0;

    // R^{-1} H_1 by forward substitution: running sums of the all-ones
    // column, i.e. (1, 2, ..., n) / sqrt(n)
    let h1 = h.column(0);
    let mut u = DVector::zeros(n);
    let mut running = 0.0;
    for i in 0..n {
        running += h1[i];
        u[i] = running;
    }

    let drift = beta * u;
    let expected_q = drift.map(|v| -v.round());
    let w = &drift + &expected_q;
    debug_assert!(w.amax() < 1.0);

    let x = CalibrationMatrix::new(h.transpose() * r)?;
    Ok(AdversarialInstance {
        x,
        w,
        expected_q,
        beta,
        column_index: 1,
    })
}

/// Realized errors of a deterministic run on one instance.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ScalingRow {
    pub n: usize,
    /// `||X(w - q)||_inf`, expected `sqrt(N)/3`.
    pub linf_error: f64,
    /// `||X(w - q)||_2`, expected to coincide with the sup norm here.
    pub l2_error: f64,
    /// `||w - q||_inf`, expected `N/3`.
    pub weight_drift: f64,
}

/// Run deterministic quantization on each instance size and report how
/// the errors scale.
pub fn scaling_report(sizes: &[usize]) -> Result<Vec<ScalingRow>> {
    let cfg = QuantConfig {
        lambda: Lambda::Fixed(0.0),
        formulation: Formulation::Cholesky,
        ..QuantConfig::deterministic(Alphabet::infinite(1.0)?)
    };
    sizes
        .iter()
        .map(|&n| {
            let inst = build_instance(n)?;
            let run = optq_column(&inst.x, &inst.w, &cfg)?;
            let err = inst.x.matrix() * &inst.w - inst.x.matrix() * &run.q;
            let drift = &inst.w - &run.q;
            Ok(ScalingRow {
                n,
                linf_error: err.amax(),
                l2_error: err.norm(),
                weight_drift: drift.amax(),
            })
        })
        .collect()
}
