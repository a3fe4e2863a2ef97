//! Reproducible synthetic inputs for tests, verifiers, and benches.
//!
//! Everything here is a pure function of its seed, so any instance that
//! shows up in a report can be regenerated exactly.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::linops::CalibrationMatrix;

pub fn gaussian_dmatrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> CalibrationMatrix {
    CalibrationMatrix::new(gaussian_dmatrix(rows, cols, seed)).expect("finite by construction")
}

pub fn gaussian_vector(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))
}

pub fn uniform_vector(n: usize, lo: f64, hi: f64, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dist = Uniform::new(lo, hi).expect("valid range");
    DVector::from_fn(n, |_, _| dist.sample(&mut rng))
}

pub fn uniform_dmatrix(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dist = Uniform::new(lo, hi).expect("valid range");
    DMatrix::from_fn(rows, cols, |_, _| dist.sample(&mut rng))
}

/// Rank-`rank` matrix `U * R` with `U` orthonormal and `R` Gaussian.
/// With probability one the result is in general position.
pub fn low_rank_matrix(rows: usize, cols: usize, rank: usize, seed: u64) -> CalibrationMatrix {
    assert!(rank >= 1 && rank <= rows.min(cols));
    let u = gaussian_dmatrix(rows, rank, seed).qr().q();
    let r = gaussian_dmatrix(rank, cols, seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    CalibrationMatrix::new(u * r).expect("finite by construction")
}

/// `x` plus entrywise Gaussian noise of standard deviation `sigma`.
pub fn drifted(x: &CalibrationMatrix, sigma: f64, seed: u64) -> CalibrationMatrix {
    let noise = gaussian_dmatrix(x.nrows(), x.ncols(), seed);
    CalibrationMatrix::new(x.matrix() + sigma * noise).expect("finite by construction")
}
