//! Qronos: quantization against a drifted input matrix while targeting
//! the clean pre-activations.
//!
//! The first step rounds the scalar least-squares fit of the target onto
//! the leading drifted column and re-solves the rest exactly; subsequent
//! steps run the usual greedy recursion on the drifted matrix. With
//! dampening, everything operates on the `sqrt(lambda)`-augmented system.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::alphabet::Rounder;
use crate::error::{Error, Result};
use crate::linops::{self, CalibrationMatrix};
use crate::optq::{
    apply_ordering, cholesky_steps, effective_matrix, least_squares_steps, permute_vector,
    unpermute_vector, Formulation, LayerResult, QuantConfig, QuantResult, QuantTrace,
};

/// One Qronos problem: clean data `x`, drifted data `x_tilde` of the same
/// shape, and the weight vector to quantize.
#[derive(Debug, Clone)]
pub struct QronosInput<'a> {
    pub x: &'a CalibrationMatrix,
    pub x_tilde: &'a CalibrationMatrix,
    pub w: &'a DVector<f64>,
    pub cfg: QuantConfig,
    /// Start from the least-squares fit `argmin ||Xw - X~ v||` instead of
    /// `w`, then quantize with plain greedy steps throughout.
    pub ls_init: bool,
}

impl<'a> QronosInput<'a> {
    pub fn new(
        x: &'a CalibrationMatrix,
        x_tilde: &'a CalibrationMatrix,
        w: &'a DVector<f64>,
        cfg: QuantConfig,
    ) -> Self {
        Self {
            x,
            x_tilde,
            w,
            cfg,
            ls_init: false,
        }
    }
}

/// Everything per-column runs share: the effective (augmented, permuted)
/// drifted matrix, the permuted clean matrix, and the Cholesky factor
/// when that formulation is selected.
struct QronosEngine {
    z: CalibrationMatrix,
    x_work: CalibrationMatrix,
    factor_l: Option<DMatrix<f64>>,
    permutation: Vec<usize>,
    lambda: f64,
    suggested_lambda: f64,
    data_rows: usize,
    cfg: QuantConfig,
    ls_init: bool,
}

impl QronosEngine {
    fn new(
        x: &CalibrationMatrix,
        x_tilde: &CalibrationMatrix,
        cfg: &QuantConfig,
        ls_init: bool,
    ) -> Result<Self> {
        if x.nrows() != x_tilde.nrows() || x.ncols() != x_tilde.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "clean data is {}x{}, drifted data is {}x{}",
                x.nrows(),
                x.ncols(),
                x_tilde.nrows(),
                x_tilde.ncols()
            )));
        }
        let lambda = cfg.lambda.resolve(x_tilde);
        let (xt_work, permutation) = apply_ordering(x_tilde, cfg.ordering);
        let x_work = x.select_columns(&permutation);
        let z = effective_matrix(&xt_work, lambda)?;
        let factor_l = match cfg.formulation {
            Formulation::Cholesky => {
                Some(linops::cholesky_inverse_hessian(&xt_work, lambda)?.l().clone())
            }
            Formulation::LeastSquares => None,
        };
        Ok(Self {
            z,
            x_work,
            factor_l,
            permutation,
            lambda,
            suggested_lambda: linops::auto_lambda(x_tilde),
            data_rows: x.nrows(),
            cfg: *cfg,
            ls_init,
        })
    }

    fn check_weight(&self, w: &DVector<f64>) -> Result<()> {
        if w.len() != self.z.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "weight vector has {} entries, data has {} columns",
                w.len(),
                self.z.ncols()
            )));
        }
        Ok(())
    }

    /// Target `[X w ; sqrt(lambda) w]` for a weight vector already in
    /// processing order.
    fn target(&self, w_work: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.z.nrows());
        let xw = self.x_work.matrix() * w_work;
        y.rows_mut(0, self.data_rows).copy_from(&xw);
        if self.lambda > 0.0 {
            let root = self.lambda.sqrt();
            for j in 0..self.z.ncols() {
                y[self.data_rows + j] = root * w_work[j];
            }
        }
        y
    }

    /// Quantize one weight vector (given in the caller's order); returns
    /// the grid vector realigned to that order plus the trace.
    fn quantize(&self, w: &DVector<f64>, stream: u64) -> Result<(DVector<f64>, QuantTrace)> {
        self.check_weight(w)?;
        let z = self.z.matrix();
        let n = z.ncols();
        let mut rounder = Rounder::new(self.cfg.rounding, stream);
        let mut trace = QuantTrace::with_capacity(n);
        let mut state = permute_vector(w, &self.permutation);
        let mut rhs = self.target(&state);

        if self.ls_init {
            state = linops::ls_solve_minnorm(z, &rhs);
        } else {
            // dedicated first step: scalar fit of the target on the leading
            // column given the untouched tail, then exact tail re-solve
            let z1 = z.column(0).into_owned();
            let n1sq = z1.norm_squared();
            let pre = if n1sq > 0.0 {
                let tail_contrib = z.columns(1, n - 1) * state.rows(1, n - 1);
                z1.dot(&(&rhs - tail_contrib)) / n1sq
            } else {
                // zero leading column: nothing to fit against; round the
                // raw weight and record that we did
                trace.zero_column_fallback = true;
                state[0]
            };
            let rounded = rounder.round(&self.cfg.alphabet, pre);
            state[0] = rounded.value;
            rhs.axpy(-rounded.value, &z1, 1.0);
            let tail = z.columns(1, n - 1).into_owned();
            let sol = linops::ls_solve_minnorm(&tail, &rhs);
            for (k, v) in sol.iter().enumerate() {
                state[1 + k] = *v;
            }
            trace.push(pre, rounded);
        }

        let from = if self.ls_init { 0 } else { 1 };
        match &self.factor_l {
            Some(l) => {
                cholesky_steps(
                    l,
                    &mut state,
                    &mut trace,
                    &self.cfg.alphabet,
                    &mut rounder,
                    from,
                    self.lambda,
                    self.suggested_lambda,
                )?;
            }
            None => {
                least_squares_steps(
                    z,
                    &mut rhs,
                    &mut state,
                    &mut trace,
                    &self.cfg.alphabet,
                    &mut rounder,
                    from,
                );
            }
        }
        Ok((unpermute_vector(&state, &self.permutation), trace))
    }
}

/// Quantize one weight vector with Qronos. Stochastic draws use stream 0.
pub fn qronos_column(input: &QronosInput) -> Result<QuantResult> {
    qronos_column_in_stream(input, 0)
}

pub fn qronos_column_in_stream(input: &QronosInput, stream: u64) -> Result<QuantResult> {
    let started = Instant::now();
    let engine = QronosEngine::new(input.x, input.x_tilde, &input.cfg, input.ls_init)?;
    let (q, trace) = engine.quantize(input.w, stream)?;
    Ok(QuantResult {
        q,
        permutation: engine.permutation,
        trace,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// Quantize every column of `w` against the same clean/drifted pair,
/// sharing one factored system. Columns run in parallel with per-column
/// stochastic streams, so the output does not depend on the schedule.
pub fn qronos_layer(
    x: &CalibrationMatrix,
    x_tilde: &CalibrationMatrix,
    w: &DMatrix<f64>,
    cfg: &QuantConfig,
    ls_init: bool,
) -> Result<LayerResult> {
    let started = Instant::now();
    if w.nrows() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "weight matrix has {} rows, data has {} columns",
            w.nrows(),
            x.ncols()
        )));
    }
    let engine = QronosEngine::new(x, x_tilde, cfg, ls_init)?;
    let columns: Vec<(DVector<f64>, QuantTrace)> = (0..w.ncols())
        .into_par_iter()
        .map(|c| engine.quantize(&w.column(c).into_owned(), c as u64))
        .collect::<Result<_>>()?;

    let mut q = DMatrix::zeros(w.nrows(), w.ncols());
    let mut traces = Vec::with_capacity(columns.len());
    for (c, (col, trace)) in columns.into_iter().enumerate() {
        q.set_column(c, &col);
        traces.push(trace);
    }
    Ok(LayerResult {
        q,
        permutation: engine.permutation,
        traces,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// The Qronos error split: the doubly-projected drift term plus the
/// per-step projected rounding contributions. Vectors live in the
/// (augmented, when dampened) row space of the system.
#[derive(Debug, Clone)]
pub struct QronosDecomposition {
    /// `y - Z q`, the realized error of the traced run.
    pub e_n: DVector<f64>,
    /// Drift carried through the projections; zero when `x_tilde == x`.
    pub leading: DVector<f64>,
    /// `P_{Z_{>= j+1}^perp} (r_j Z_j)` in processing order.
    pub terms: Vec<DVector<f64>>,
}

impl QronosDecomposition {
    pub fn reconstruction(&self) -> DVector<f64> {
        let mut acc = self.leading.clone();
        for t in &self.terms {
            acc += t;
        }
        acc
    }

    pub fn reconstruction_rel_error(&self) -> f64 {
        let gap = (self.reconstruction() - &self.e_n).norm();
        let denom = self.e_n.norm();
        if denom == 0.0 {
            gap
        } else {
            gap / denom
        }
    }
}

/// Recompute the error formula pieces for a traced Qronos run: the
/// leading term is the drift pushed through the projections off the
/// first column and then off the trailing block (off the whole span for
/// the `ls_init` variant); the sum of all pieces must reproduce `e_n`.
pub fn qronos_error_decomposition(
    input: &QronosInput,
    result: &QuantResult,
) -> Result<QronosDecomposition> {
    if result.trace.is_empty() {
        return Err(Error::TraceMissing);
    }
    let engine = QronosEngine::new(input.x, input.x_tilde, &input.cfg, input.ls_init)?;
    engine.check_weight(input.w)?;
    if result.trace.len() != engine.z.ncols() {
        return Err(Error::DimensionMismatch(
            "trace does not match the data".into(),
        ));
    }
    let z = engine.z.matrix();
    let n = z.ncols();
    let q_p = permute_vector(&result.q, &result.permutation);
    let w_p = permute_vector(input.w, &result.permutation);
    let y = engine.target(&w_p);
    let e_n = &y - z * q_p;

    let drift = &y - z * w_p;
    let leading = if input.ls_init {
        linops::project_residual(&z.clone_owned(), &drift)
    } else {
        let off_first = linops::project_residual(&z.columns(0, 1).into_owned(), &drift);
        linops::project_residual(&z.columns(1, n - 1).into_owned(), &off_first)
    };

    let terms = (0..n)
        .map(|j| {
            let tail = z.columns(j + 1, n - j - 1).into_owned();
            let col = z.column(j).into_owned();
            linops::project_residual(&tail, &col) * result.trace.residues[j]
        })
        .collect();

    Ok(QronosDecomposition {
        e_n,
        leading,
        terms,
    })
}
