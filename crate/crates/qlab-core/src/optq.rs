//! Greedy error-compensating quantization of weight vectors against
//! calibration data.
//!
//! Two interchangeable formulations are provided. The Cholesky path runs
//! the classic recursion on the factor of the inverse dampened Hessian
//! and is the fast one. The least-squares path re-solves the trailing
//! problem from scratch after each rounding step; it is the correctness
//! reference, works for rank-deficient data without dampening, and must
//! agree with the Cholesky path whenever both apply.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alphabet::{Alphabet, Rounded, Rounder, RoundingMode};
use crate::error::{Error, Result};
use crate::linops::{self, CalibrationMatrix};

/// Cholesky pivots below this abort instead of dividing.
const MIN_PIVOT: f64 = 1e-300;

/// Dampening selection: a fixed value, or the `0.01 * ||X||_F^2 / N`
/// default when set to `Auto`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Lambda {
    Auto,
    Fixed(f64),
}

impl Lambda {
    pub fn resolve(&self, x: &CalibrationMatrix) -> f64 {
        match self {
            Lambda::Auto => linops::auto_lambda(x),
            Lambda::Fixed(v) => *v,
        }
    }
}

/// Whether to process features in the caller's order or sorted by
/// decreasing column norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnOrdering {
    None,
    DescendingNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Formulation {
    Cholesky,
    LeastSquares,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub lambda: Lambda,
    pub ordering: ColumnOrdering,
    pub formulation: Formulation,
    pub alphabet: Alphabet,
    pub rounding: RoundingMode,
}

impl QuantConfig {
    /// Deterministic Cholesky-path config with automatic dampening.
    pub fn deterministic(alphabet: Alphabet) -> Self {
        Self {
            lambda: Lambda::Auto,
            ordering: ColumnOrdering::None,
            formulation: Formulation::Cholesky,
            alphabet,
            rounding: RoundingMode::Deterministic,
        }
    }
}

/// Per-step record of one column quantization, in processing order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct QuantTrace {
    /// Value each coordinate held right before it was rounded.
    pub preround: Vec<f64>,
    /// Grid value it was rounded to.
    pub quantized: Vec<f64>,
    /// `preround - quantized`.
    pub residues: Vec<f64>,
    /// Whether the rounding clamped against a finite grid edge.
    pub saturated: Vec<bool>,
    /// Set when a zero leading column forced the plain-rounding fallback.
    pub zero_column_fallback: bool,
}

impl QuantTrace {
    pub(crate) fn with_capacity(n: usize) -> Self {
        Self {
            preround: Vec::with_capacity(n),
            quantized: Vec::with_capacity(n),
            residues: Vec::with_capacity(n),
            saturated: Vec::with_capacity(n),
            zero_column_fallback: false,
        }
    }

    pub(crate) fn push(&mut self, pre: f64, rounded: Rounded) {
        self.preround.push(pre);
        self.quantized.push(rounded.value);
        self.residues.push(pre - rounded.value);
        self.saturated.push(rounded.saturated);
    }

    pub fn len(&self) -> usize {
        self.preround.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preround.is_empty()
    }

    pub fn any_saturated(&self) -> bool {
        self.saturated.iter().any(|s| *s)
    }
}

/// Quantization of a single weight vector. `q` is aligned with the
/// caller's original column order; the trace stays in processing order
/// with the applied permutation attached.
#[derive(Debug, Clone)]
pub struct QuantResult {
    pub q: DVector<f64>,
    /// `permutation[k]` is the original index of the column processed at
    /// position `k`.
    pub permutation: Vec<usize>,
    pub trace: QuantTrace,
    /// Wall time in seconds.
    pub wall_time: f64,
}

/// Quantization of a whole layer, one trace per output column.
#[derive(Debug, Clone)]
pub struct LayerResult {
    pub q: DMatrix<f64>,
    pub permutation: Vec<usize>,
    pub traces: Vec<QuantTrace>,
    pub wall_time: f64,
}

/// Stable sort of columns by decreasing Euclidean norm. Returns the
/// permuted matrix and the permutation (`perm[k]` = original index).
pub fn reorder_descending(x: &CalibrationMatrix) -> (CalibrationMatrix, Vec<usize>) {
    let norms = x.column_norms();
    let mut perm: Vec<usize> = (0..x.ncols()).collect();
    perm.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).expect("finite norms"));
    (x.select_columns(&perm), perm)
}

pub(crate) fn identity_permutation(n: usize) -> Vec<usize> {
    (0..n).collect()
}

pub(crate) fn permute_vector(v: &DVector<f64>, perm: &[usize]) -> DVector<f64> {
    DVector::from_fn(perm.len(), |k, _| v[perm[k]])
}

pub(crate) fn unpermute_vector(v: &DVector<f64>, perm: &[usize]) -> DVector<f64> {
    let mut out = DVector::zeros(perm.len());
    for (k, &orig) in perm.iter().enumerate() {
        out[orig] = v[k];
    }
    out
}

pub(crate) fn apply_ordering(
    x: &CalibrationMatrix,
    ordering: ColumnOrdering,
) -> (CalibrationMatrix, Vec<usize>) {
    match ordering {
        ColumnOrdering::None => (x.clone(), identity_permutation(x.ncols())),
        ColumnOrdering::DescendingNorm => reorder_descending(x),
    }
}

/// The matrix the least-squares path actually runs on: `X` itself without
/// dampening, the `sqrt(lambda)`-augmented stack otherwise.
pub(crate) fn effective_matrix(x: &CalibrationMatrix, lambda: f64) -> Result<CalibrationMatrix> {
    if lambda > 0.0 {
        linops::augment(x, lambda)
    } else if lambda == 0.0 {
        Ok(x.clone())
    } else {
        Err(Error::InvalidLambda(lambda))
    }
}

/// Run the Cholesky recursion over `state[from..]`: round the current
/// coordinate, then shift the still-free coordinates along column `t` of
/// `L` to absorb the rounding error.
#[allow(clippy::too_many_arguments)]
pub(crate) fn cholesky_steps(
    l: &DMatrix<f64>,
    state: &mut DVector<f64>,
    trace: &mut QuantTrace,
    alphabet: &Alphabet,
    rounder: &mut Rounder,
    from: usize,
    lambda: f64,
    suggested_lambda: f64,
) -> Result<()> {
    let n = l.nrows();
    for t in from..n {
        let pre = state[t];
        let rounded = rounder.round(alphabet, pre);
        let ltt = l[(t, t)];
        if !(ltt.is_finite() && ltt > MIN_PIVOT) {
            return Err(Error::NotPositiveDefinite {
                lambda,
                suggested: suggested_lambda,
            });
        }
        let scale = (rounded.value - pre) / ltt;
        for i in t + 1..n {
            state[i] += scale * l[(i, t)];
        }
        state[t] = rounded.value;
        trace.push(pre, rounded);
    }
    Ok(())
}

/// Run the least-squares recursion over `state[from..]`: round the
/// current coordinate, subtract its contribution from `rhs`, and replace
/// the trailing coordinates with the minimal-norm solution of
/// `min ||rhs - Z_{>t} v||`. `rhs` must enter as
/// `y - sum_{j < from} q_j Z_j`.
pub(crate) fn least_squares_steps(
    z: &DMatrix<f64>,
    rhs: &mut DVector<f64>,
    state: &mut DVector<f64>,
    trace: &mut QuantTrace,
    alphabet: &Alphabet,
    rounder: &mut Rounder,
    from: usize,
) {
    let n = z.ncols();
    for t in from..n {
        let pre = state[t];
        let rounded = rounder.round(alphabet, pre);
        state[t] = rounded.value;
        rhs.axpy(-rounded.value, &z.column(t), 1.0);
        let tail = z.columns(t + 1, n - t - 1).into_owned();
        let sol = linops::ls_solve_minnorm(&tail, rhs);
        for (k, v) in sol.iter().enumerate() {
            state[t + 1 + k] = *v;
        }
        trace.push(pre, rounded);
    }
}

fn check_column_dims(x: &CalibrationMatrix, w: &DVector<f64>) -> Result<()> {
    if w.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "weight vector has {} entries, calibration matrix has {} columns",
            w.len(),
            x.ncols()
        )));
    }
    Ok(())
}

/// Quantize one weight vector. Stochastic draws use stream 0; workers
/// quantizing many columns should use [`optq_column_in_stream`] with the
/// column index as the stream id.
pub fn optq_column(x: &CalibrationMatrix, w: &DVector<f64>, cfg: &QuantConfig) -> Result<QuantResult> {
    optq_column_in_stream(x, w, cfg, 0)
}

pub fn optq_column_in_stream(
    x: &CalibrationMatrix,
    w: &DVector<f64>,
    cfg: &QuantConfig,
    stream: u64,
) -> Result<QuantResult> {
    let started = Instant::now();
    check_column_dims(x, w)?;
    let lambda = cfg.lambda.resolve(x);
    let (x_work, permutation) = apply_ordering(x, cfg.ordering);
    let w_work = permute_vector(w, &permutation);

    let mut rounder = Rounder::new(cfg.rounding, stream);
    let mut trace = QuantTrace::with_capacity(x.ncols());
    let mut state = w_work;

    match cfg.formulation {
        Formulation::Cholesky => {
            let factor = linops::cholesky_inverse_hessian(&x_work, lambda)?;
            cholesky_steps(
                factor.l(),
                &mut state,
                &mut trace,
                &cfg.alphabet,
                &mut rounder,
                0,
                lambda,
                linops::auto_lambda(x),
            )?;
        }
        Formulation::LeastSquares => {
            let z = effective_matrix(&x_work, lambda)?;
            let mut rhs = z.matrix() * &state;
            least_squares_steps(
                z.matrix(),
                &mut rhs,
                &mut state,
                &mut trace,
                &cfg.alphabet,
                &mut rounder,
                0,
            );
        }
    }

    let q = unpermute_vector(&state, &permutation);
    Ok(QuantResult {
        q,
        permutation,
        trace,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// Quantize every column of `w` against the same calibration data. The
/// shared factor (or augmented matrix) is computed once; columns run in
/// parallel with per-column stochastic streams, so the output does not
/// depend on the schedule.
pub fn optq_layer(x: &CalibrationMatrix, w: &DMatrix<f64>, cfg: &QuantConfig) -> Result<LayerResult> {
    let started = Instant::now();
    if w.nrows() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "weight matrix has {} rows, calibration matrix has {} columns",
            w.nrows(),
            x.ncols()
        )));
    }
    let lambda = cfg.lambda.resolve(x);
    let (x_work, permutation) = apply_ordering(x, cfg.ordering);

    enum Shared {
        Factor(DMatrix<f64>),
        Effective(CalibrationMatrix),
    }
    let shared = match cfg.formulation {
        Formulation::Cholesky => {
            Shared::Factor(linops::cholesky_inverse_hessian(&x_work, lambda)?.l().clone())
        }
        Formulation::LeastSquares => Shared::Effective(effective_matrix(&x_work, lambda)?),
    };
    let suggested = linops::auto_lambda(x);

    let columns: Vec<(DVector<f64>, QuantTrace)> = (0..w.ncols())
        .into_par_iter()
        .map(|c| -> Result<(DVector<f64>, QuantTrace)> {
            let w_col = w.column(c).into_owned();
            let mut state = permute_vector(&w_col, &permutation);
            let mut trace = QuantTrace::with_capacity(state.len());
            let mut rounder = Rounder::new(cfg.rounding, c as u64);
            match &shared {
                Shared::Factor(l) => {
                    cholesky_steps(
                        l,
                        &mut state,
                        &mut trace,
                        &cfg.alphabet,
                        &mut rounder,
                        0,
                        lambda,
                        suggested,
                    )?;
                }
                Shared::Effective(z) => {
                    let mut rhs = z.matrix() * &state;
                    least_squares_steps(
                        z.matrix(),
                        &mut rhs,
                        &mut state,
                        &mut trace,
                        &cfg.alphabet,
                        &mut rounder,
                        0,
                    );
                }
            }
            Ok((unpermute_vector(&state, &permutation), trace))
        })
        .collect::<Result<_>>()?;

    let mut q = DMatrix::zeros(w.nrows(), w.ncols());
    let mut traces = Vec::with_capacity(columns.len());
    for (c, (col, trace)) in columns.into_iter().enumerate() {
        q.set_column(c, &col);
        traces.push(trace);
    }
    Ok(LayerResult {
        q,
        permutation,
        traces,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// The final error split into its per-step projected contributions.
#[derive(Debug, Clone)]
pub struct ErrorDecomposition {
    /// `X w - X q`, computed directly.
    pub e_n: DVector<f64>,
    /// `P_{X_{>= j+1}^perp} (r_j X_j)` in processing order; their sum must
    /// reproduce `e_n`.
    pub terms: Vec<DVector<f64>>,
}

impl ErrorDecomposition {
    pub fn sum_of_terms(&self) -> DVector<f64> {
        let mut acc = DVector::zeros(self.e_n.len());
        for t in &self.terms {
            acc += t;
        }
        acc
    }

    /// `||sum terms - e_n|| / ||e_n||`, or the absolute gap when the
    /// realized error is zero.
    pub fn reconstruction_rel_error(&self) -> f64 {
        let gap = (self.sum_of_terms() - &self.e_n).norm();
        let denom = self.e_n.norm();
        if denom == 0.0 {
            gap
        } else {
            gap / denom
        }
    }
}

/// Recompute the per-step projected error terms from a traced run. For a
/// dampened run, pass the augmented matrix: the identity lives there.
pub fn error_decomposition(
    x: &CalibrationMatrix,
    w: &DVector<f64>,
    result: &QuantResult,
) -> Result<ErrorDecomposition> {
    if result.trace.is_empty() {
        return Err(Error::TraceMissing);
    }
    check_column_dims(x, w)?;
    if result.trace.len() != x.ncols() || result.permutation.len() != x.ncols() {
        return Err(Error::DimensionMismatch(
            "trace does not match the calibration matrix".into(),
        ));
    }
    let e_n = x.matrix() * w - x.matrix() * &result.q;
    let x_p = x.select_columns(&result.permutation);
    let n = x_p.ncols();
    let terms = (0..n)
        .map(|j| {
            let tail = x_p.matrix().columns(j + 1, n - j - 1).into_owned();
            let col = x_p.matrix().column(j).into_owned();
            linops::project_residual(&tail, &col) * result.trace.residues[j]
        })
        .collect();
    Ok(ErrorDecomposition { e_n, terms })
}
