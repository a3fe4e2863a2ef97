//! Shared fixtures for the benchmarks.

use nalgebra::{DMatrix, DVector};
use qlab_core::sim;
use qlab_core::CalibrationMatrix;

pub struct Fixture {
    pub x: CalibrationMatrix,
    pub w: DVector<f64>,
    pub w_layer: DMatrix<f64>,
}

pub fn fixture(m: usize, n: usize, n_prime: usize) -> Fixture {
    Fixture {
        x: sim::gaussian_matrix(m, n, 11),
        w: sim::uniform_vector(n, -1.0, 1.0, 12),
        w_layer: sim::uniform_dmatrix(n, n_prime, -1.0, 1.0, 13),
    }
}
