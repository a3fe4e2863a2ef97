//! Closed-form error-bound constants, the deterministic inequality
//! checks, and Monte Carlo verification of the high-probability
//! entry-wise bounds for stochastic rounding.
//!
//! Natural logarithms throughout. Probability parameters `p`, `p'`
//! default to 2; `N' = 1` recovers the single-column statements.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::alphabet::{derive_seeds, Alphabet, RoundingMode};
use crate::error::{Error, Result};
use crate::linops::{self, CalibrationMatrix};
use crate::optq::{optq_column_in_stream, ColumnOrdering, Formulation, Lambda, QuantConfig};
use crate::qronos::{qronos_column_in_stream, QronosInput};

const TWO_PI: f64 = std::f64::consts::TAU;

fn check_lambda(lambda: f64) -> Result<f64> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(lambda)
    } else {
        Err(Error::InvalidLambda(lambda))
    }
}

/// Shared inner maximum of the two bound constants: trailing-block
/// conditioning for `j <= N - m`, raw column norms past that.
fn conditioning_max(x: &CalibrationMatrix, lambda: f64) -> f64 {
    let (m, n) = (x.nrows(), x.ncols());
    let norms = x.column_norms();
    let sigma = linops::sigma_min_sequence(x);
    let split = n.saturating_sub(m); // 1-based j <= split goes to the first branch
    let mut inner = f64::NEG_INFINITY;
    for j0 in 0..n {
        let term = if j0 < split {
            let s = sigma[j0];
            lambda * norms[j0] * norms[j0] / (s * s + lambda)
        } else {
            norms[j0] * norms[j0]
        };
        inner = inner.max(term);
    }
    inner
}

/// Squared output-error constant: the conditioning maximum capped by the
/// mean squared column norm, plus the dampening.
pub fn compute_c2(x: &CalibrationMatrix, lambda: f64) -> Result<f64> {
    let lambda = check_lambda(lambda)?;
    let cap = x.frobenius_norm_squared() / x.ncols() as f64;
    Ok((conditioning_max(x, lambda).min(cap) + lambda).sqrt())
}

/// Squared entry-wise constant: same maximum, no Frobenius cap.
pub fn compute_cinf(x: &CalibrationMatrix, lambda: f64) -> Result<f64> {
    let lambda = check_lambda(lambda)?;
    Ok((conditioning_max(x, lambda) + lambda).sqrt())
}

/// `sqrt(2) * count / (N^p * N'^(p'-1))`, the raw tail mass before
/// clipping. `count` is `m + N` for the dampened theorems, `m` or the
/// rank for the undampened ones.
pub fn tail_probability(count: usize, n: usize, n_prime: usize, p: f64, p_prime: f64) -> f64 {
    2f64.sqrt() * count as f64 / ((n as f64).powf(p) * (n_prime as f64).powf(p_prime - 1.0))
}

/// Entry-wise spread factor `delta * sqrt(2 pi (p ln N + p' ln N'))`.
pub fn spread_factor(delta: f64, n: usize, n_prime: usize, p: f64, p_prime: f64) -> f64 {
    delta * (TWO_PI * (p * (n as f64).ln() + p_prime * (n_prime as f64).ln())).sqrt()
}

/// Solve `p ln N + (p' - 1) ln N' = ln(sqrt(2) m / epsilon)` for `p`
/// with `p'` pinned at 2, so a caller can state a target failure rate
/// instead of a probability exponent.
pub fn p_for_target_failure(m: usize, n: usize, n_prime: usize, epsilon: f64) -> f64 {
    let p_prime = 2.0;
    ((2f64.sqrt() * m as f64 / epsilon).ln() - (p_prime - 1.0) * (n_prime as f64).ln())
        / (n as f64).ln()
}

/// Every closed-form quantity the bound statements are built from, for
/// one matrix.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub c2: f64,
    pub cinf: f64,
    pub proj_norms: Vec<f64>,
    pub sigma_mins: Vec<f64>,
    pub l2_bound_xwq: f64,
    pub l2_bound_wq: f64,
    pub linf_bound_xwq: f64,
    pub linf_bound_wq: f64,
    pub p: f64,
    pub p_prime: f64,
    /// `sqrt(2)(m+N) / (N^p N'^(p'-1))`, clipped to `[0, 1]`.
    pub failure_prob: f64,
}

pub fn bound_report(
    x: &CalibrationMatrix,
    lambda: f64,
    delta: f64,
    p: f64,
    p_prime: f64,
    n_prime: usize,
) -> Result<BoundReport> {
    let lambda = check_lambda(lambda)?;
    let (m, n) = (x.nrows(), x.ncols());
    let c2 = compute_c2(x, lambda)?;
    let cinf = compute_cinf(x, lambda)?;
    let l2_scale = (n as f64).sqrt() * delta / 2.0;
    let spread = spread_factor(delta, n, n_prime, p, p_prime);
    Ok(BoundReport {
        c2,
        cinf,
        proj_norms: linops::projection_residual_norms(x),
        sigma_mins: linops::sigma_min_sequence(x),
        l2_bound_xwq: l2_scale * c2,
        l2_bound_wq: l2_scale * c2 / lambda.sqrt(),
        linf_bound_xwq: spread * cinf,
        linf_bound_wq: spread * cinf / lambda.sqrt(),
        p,
        p_prime,
        failure_prob: tail_probability(m + n, n, n_prime, p, p_prime).clamp(0.0, 1.0),
    })
}

/// Outcome of the deterministic output-error inequalities on one run.
#[derive(Debug, Clone, Serialize)]
pub struct L2Check {
    /// `||Xw - Xq||^2 + lambda ||w - q||^2`.
    pub realized_combined: f64,
    /// `(delta^2 / 4) N C2^2`.
    pub bound_combined: f64,
    pub slack: f64,
    pub realized_xwq: f64,
    pub bound_xwq: f64,
    pub realized_wq: f64,
    pub bound_wq: f64,
    /// `(sqrt(N) delta / 2) min{ sqrt(Tr/N + lambda), ||X||_op }`.
    pub simplified_bound_xwq: f64,
    /// `(sqrt(N) delta / 2) sqrt(Tr/(N lambda) + 1)`.
    pub simplified_bound_wq: f64,
    pub pass: bool,
}

/// Check the dampened output-error bound and its corollaries against a
/// realized quantization.
pub fn check_l2_theorem(
    x: &CalibrationMatrix,
    w: &DVector<f64>,
    q: &DVector<f64>,
    lambda: f64,
    delta: f64,
) -> Result<L2Check> {
    let lambda = check_lambda(lambda)?;
    if w.len() != x.ncols() || q.len() != x.ncols() {
        return Err(Error::DimensionMismatch(
            "weights and data disagree on the feature count".into(),
        ));
    }
    let n = x.ncols() as f64;
    let c2 = compute_c2(x, lambda)?;
    let xwq = (x.matrix() * w - x.matrix() * q).norm();
    let wq = (w - q).norm();
    let realized_combined = xwq * xwq + lambda * wq * wq;
    let bound_combined = delta * delta / 4.0 * n * c2 * c2;
    let l2_scale = n.sqrt() * delta / 2.0;
    let bound_xwq = l2_scale * c2;
    let bound_wq = l2_scale * c2 / lambda.sqrt();

    let trace_over_n = x.frobenius_norm_squared() / n;
    let op_norm = x
        .matrix()
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    let simplified_bound_xwq = l2_scale * (trace_over_n + lambda).sqrt().min(op_norm);
    let simplified_bound_wq = l2_scale * (trace_over_n / lambda + 1.0).sqrt();

    let pass = realized_combined <= bound_combined
        && xwq <= bound_xwq
        && wq <= bound_wq
        && xwq <= simplified_bound_xwq
        && wq <= simplified_bound_wq;
    Ok(L2Check {
        realized_combined,
        bound_combined,
        slack: bound_combined - realized_combined,
        realized_xwq: xwq,
        bound_xwq,
        realized_wq: wq,
        bound_wq,
        simplified_bound_xwq,
        simplified_bound_wq,
        pass,
    })
}

/// One-sided Monte Carlo verdict: the empirical violation rate must not
/// exceed the theoretical tail mass by more than three binomial standard
/// errors. A tail mass of one or more makes the statement vacuous.
#[derive(Debug, Clone, Serialize)]
pub struct TailVerdict {
    pub trials: usize,
    pub violations: usize,
    pub empirical_rate: f64,
    pub predicted_rate: f64,
    pub allowance: f64,
    pub vacuous: bool,
    pub pass: bool,
}

impl TailVerdict {
    fn judge(trials: usize, violations: usize, raw_predicted: f64) -> Self {
        let predicted = raw_predicted.clamp(0.0, 1.0);
        let se = (predicted * (1.0 - predicted) / trials as f64).sqrt();
        let empirical = violations as f64 / trials as f64;
        Self {
            trials,
            violations,
            empirical_rate: empirical,
            predicted_rate: predicted,
            allowance: 3.0 * se,
            vacuous: raw_predicted >= 1.0,
            pass: empirical <= predicted + 3.0 * se,
        }
    }
}

/// Monte Carlo check of the dampened entry-wise bounds.
#[derive(Debug, Clone, Serialize)]
pub struct LinfMcReport {
    /// Joint verdict: a trial fails when either bound is exceeded.
    pub verdict: TailVerdict,
    pub xwq_violations: usize,
    pub wq_violations: usize,
    pub xwq_bound: f64,
    pub wq_bound: f64,
}

/// Re-run stochastic quantization `trials` times with derived seeds and
/// count how often `max|XW - XQ|` or `max|W - Q|` exceeds its bound.
#[allow(clippy::too_many_arguments)]
pub fn check_linf_theorem_mc(
    x: &CalibrationMatrix,
    w: &DMatrix<f64>,
    lambda: f64,
    delta: f64,
    p: f64,
    p_prime: f64,
    trials: usize,
    master_seed: u64,
) -> Result<LinfMcReport> {
    let lambda = check_lambda(lambda)?;
    if w.nrows() != x.ncols() {
        return Err(Error::DimensionMismatch(
            "weight rows must match data columns".into(),
        ));
    }
    let (n, n_prime) = (x.ncols(), w.ncols());
    let cinf = compute_cinf(x, lambda)?;
    let spread = spread_factor(delta, n, n_prime, p, p_prime);
    let xwq_bound = spread * cinf;
    let wq_bound = xwq_bound / lambda.sqrt();

    let seeds = derive_seeds(master_seed, trials);
    let outcomes: Vec<Result<(bool, bool)>> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = QuantConfig {
                lambda: Lambda::Fixed(lambda),
                ordering: ColumnOrdering::None,
                formulation: Formulation::Cholesky,
                alphabet: Alphabet::infinite(delta)?,
                rounding: RoundingMode::Stochastic { seed },
            };
            let mut max_xwq = 0.0f64;
            let mut max_wq = 0.0f64;
            for c in 0..n_prime {
                let col = w.column(c).into_owned();
                let run = optq_column_in_stream(x, &col, &cfg, c as u64)?;
                max_xwq = max_xwq.max((x.matrix() * &col - x.matrix() * &run.q).amax());
                max_wq = max_wq.max((&col - &run.q).amax());
            }
            Ok((max_xwq > xwq_bound, max_wq > wq_bound))
        })
        .collect();

    let mut xwq_violations = 0;
    let mut wq_violations = 0;
    let mut joint = 0;
    for outcome in outcomes {
        let (x_bad, w_bad) = outcome?;
        xwq_violations += x_bad as usize;
        wq_violations += w_bad as usize;
        joint += (x_bad || w_bad) as usize;
    }
    let predicted = tail_probability(x.nrows() + n, n, n_prime, p, p_prime);
    Ok(LinfMcReport {
        verdict: TailVerdict::judge(trials, joint, predicted),
        xwq_violations,
        wq_violations,
        xwq_bound,
        wq_bound,
    })
}

/// Monte Carlo check of the rank-limited entry-wise bound, plus the
/// mid-run identity that the error is gone once only the last `rank`
/// coordinates remain.
#[derive(Debug, Clone, Serialize)]
pub struct LowRankReport {
    pub verdict: TailVerdict,
    pub detected_rank: usize,
    pub bound: f64,
    /// Largest `||e_{N-r}|| / ||Xw||` seen over all trials and columns.
    pub max_midrun_rel_residual: f64,
}

/// Stochastic least-squares quantization on rank-`rank` data: entry-wise
/// error bounded by the largest trailing column norm, with tail mass
/// driven by the rank rather than the row count.
#[allow(clippy::too_many_arguments)]
pub fn check_lowrank_corollary(
    x: &CalibrationMatrix,
    w: &DMatrix<f64>,
    rank: usize,
    delta: f64,
    p: f64,
    p_prime: f64,
    trials: usize,
    master_seed: u64,
) -> Result<LowRankReport> {
    if w.nrows() != x.ncols() {
        return Err(Error::DimensionMismatch(
            "weight rows must match data columns".into(),
        ));
    }
    let detected = linops::numerical_rank(x.matrix());
    if detected != rank {
        return Err(Error::RankMismatch {
            detected,
            expected: rank,
        });
    }
    let (n, n_prime) = (x.ncols(), w.ncols());
    let trailing_max = x.column_norms()[n - rank..]
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    let bound = spread_factor(delta, n, n_prime, p, p_prime) * trailing_max;

    // the projected columns are deterministic; the per-trial running
    // error is their combination with the traced rounding residues
    let projected: Vec<DVector<f64>> = (0..n)
        .map(|j| {
            let tail = x.matrix().columns(j + 1, n - j - 1).into_owned();
            linops::project_residual(&tail, &x.matrix().column(j).into_owned())
        })
        .collect();

    let seeds = derive_seeds(master_seed, trials);
    let outcomes: Vec<Result<(bool, f64)>> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = QuantConfig {
                lambda: Lambda::Fixed(0.0),
                ordering: ColumnOrdering::None,
                formulation: Formulation::LeastSquares,
                alphabet: Alphabet::infinite(delta)?,
                rounding: RoundingMode::Stochastic { seed },
            };
            let mut violated = false;
            let mut worst_midrun = 0.0f64;
            for c in 0..n_prime {
                let col = w.column(c).into_owned();
                let run = optq_column_in_stream(x, &col, &cfg, c as u64)?;
                let err = x.matrix() * &col - x.matrix() * &run.q;
                violated |= err.amax() > bound;

                let mut midrun = DVector::zeros(x.nrows());
                for (j, proj) in projected.iter().enumerate().take(n - rank) {
                    midrun.axpy(run.trace.residues[j], proj, 1.0);
                }
                let scale = (x.matrix() * &col).norm();
                if scale > 0.0 {
                    worst_midrun = worst_midrun.max(midrun.norm() / scale);
                }
            }
            Ok((violated, worst_midrun))
        })
        .collect();

    let mut violations = 0;
    let mut max_midrun = 0.0f64;
    for outcome in outcomes {
        let (bad, midrun) = outcome?;
        violations += bad as usize;
        max_midrun = max_midrun.max(midrun);
    }
    let predicted = tail_probability(rank, n, n_prime, p, p_prime);
    Ok(LowRankReport {
        verdict: TailVerdict::judge(trials, violations, predicted),
        detected_rank: detected,
        bound,
        max_midrun_rel_residual: max_midrun,
    })
}

/// Outcome of the drift-correcting output-error bound on one
/// deterministic run: leading drift term plus the half-step spread over
/// the projected trailing norms (capped by the root-mean-square column
/// norm of the drifted data).
#[derive(Debug, Clone, Serialize)]
pub struct QronosL2Check {
    pub realized: f64,
    pub leading_norm: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Check `||Xw - X~q||` against the leading-term-plus-spread bound for a
/// deterministic Qronos run.
pub fn check_qronos_l2(
    x: &CalibrationMatrix,
    x_tilde: &CalibrationMatrix,
    w: &DVector<f64>,
    q: &DVector<f64>,
    delta: f64,
) -> Result<QronosL2Check> {
    if w.len() != x.ncols() || q.len() != x.ncols() {
        return Err(Error::DimensionMismatch(
            "weights and data disagree on the feature count".into(),
        ));
    }
    let n = x.ncols();
    let realized = (x.matrix() * w - x_tilde.matrix() * q).norm();

    let drift = x.matrix() * w - x_tilde.matrix() * w;
    let off_first =
        linops::project_residual(&x_tilde.matrix().columns(0, 1).into_owned(), &drift);
    let leading =
        linops::project_residual(&x_tilde.matrix().columns(1, n - 1).into_owned(), &off_first);
    let leading_norm = leading.norm();

    let max_proj = linops::projection_residual_norms(x_tilde)
        .into_iter()
        .fold(0.0, f64::max);
    let rms_col = (x_tilde.frobenius_norm_squared() / n as f64).sqrt();
    let bound =
        leading_norm + delta / 2.0 * (n as f64).sqrt() * max_proj.min(rms_col);
    Ok(QronosL2Check {
        realized,
        leading_norm,
        bound,
        pass: realized <= bound,
    })
}

/// Monte Carlo check of the drift-correcting entry-wise bound: per
/// coordinate, the realized error must stay within the (deterministic)
/// projected-drift magnitude plus the stochastic spread.
#[derive(Debug, Clone, Serialize)]
pub struct QronosMcReport {
    pub verdict: TailVerdict,
    pub spread: f64,
    pub leading_linf: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn check_qronos_linf_mc(
    x: &CalibrationMatrix,
    x_tilde: &CalibrationMatrix,
    w: &DMatrix<f64>,
    delta: f64,
    p: f64,
    p_prime: f64,
    trials: usize,
    master_seed: u64,
) -> Result<QronosMcReport> {
    if w.nrows() != x.ncols() {
        return Err(Error::DimensionMismatch(
            "weight rows must match data columns".into(),
        ));
    }
    let (m, n, n_prime) = (x.nrows(), x.ncols(), w.ncols());
    let proj = linops::projection_residual_norms(x_tilde);
    let max_proj = proj.iter().cloned().fold(0.0, f64::max);
    let spread = spread_factor(delta, n, n_prime, p, p_prime) * max_proj;

    // leading terms are rounding-free: drift through the two projections
    let leadings: Vec<DVector<f64>> = (0..n_prime)
        .map(|c| {
            let col = w.column(c).into_owned();
            let drift = x.matrix() * &col - x_tilde.matrix() * &col;
            let off_first =
                linops::project_residual(&x_tilde.matrix().columns(0, 1).into_owned(), &drift);
            linops::project_residual(
                &x_tilde.matrix().columns(1, n - 1).into_owned(),
                &off_first,
            )
        })
        .collect();
    let leading_linf = leadings.iter().map(|l| l.amax()).fold(0.0, f64::max);

    let seeds = derive_seeds(master_seed, trials);
    let outcomes: Vec<Result<bool>> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = QuantConfig {
                lambda: Lambda::Fixed(0.0),
                ordering: ColumnOrdering::None,
                formulation: Formulation::LeastSquares,
                alphabet: Alphabet::infinite(delta)?,
                rounding: RoundingMode::Stochastic { seed },
            };
            let mut violated = false;
            for (c, leading) in leadings.iter().enumerate() {
                let col = w.column(c).into_owned();
                let input = QronosInput::new(x, x_tilde, &col, cfg);
                let run = qronos_column_in_stream(&input, c as u64)?;
                let err = x.matrix() * &col - x_tilde.matrix() * &run.q;
                for i in 0..m {
                    if err[i].abs() > leading[i].abs() + spread {
                        violated = true;
                    }
                }
            }
            Ok(violated)
        })
        .collect();

    let mut violations = 0;
    for outcome in outcomes {
        violations += outcome? as usize;
    }
    // tail mass sqrt(2) m / (N^p N'^p'), one power of N' stronger than
    // the plain layer statement
    let predicted =
        2f64.sqrt() * m as f64 / ((n as f64).powf(p) * (n_prime as f64).powf(p_prime));
    Ok(QronosMcReport {
        verdict: TailVerdict::judge(trials, violations, predicted),
        spread,
        leading_linf,
    })
}

/// Split of the expected squared error on unseen rows into the
/// calibration residual and the second-moment mismatch.
#[derive(Debug, Clone, Serialize)]
pub struct GeneralizationSplit {
    /// `||X(w-q)||^2 / m`.
    pub calibration: f64,
    /// `(w-q)^T (Zhat - X^T X / m) (w-q)` for the holdout second moment.
    pub mismatch: f64,
}

/// The two terms sum to the empirical mean of `(z^T (w-q))^2` over the
/// rows of `z`.
pub fn generalization_decomposition(
    x: &CalibrationMatrix,
    w: &DVector<f64>,
    q: &DVector<f64>,
    z: &DMatrix<f64>,
) -> Result<GeneralizationSplit> {
    let n = x.ncols();
    if w.len() != n || q.len() != n || z.ncols() != n || z.nrows() == 0 {
        return Err(Error::DimensionMismatch(
            "holdout rows must be nonempty with the same feature count".into(),
        ));
    }
    let d = w - q;
    let m = x.nrows() as f64;
    let calibration = (x.matrix() * &d).norm_squared() / m;
    let zhat = z.transpose() * z / z.nrows() as f64;
    let gram = x.matrix().transpose() * x.matrix() / m;
    let mismatch = (d.transpose() * (zhat - gram) * &d)[(0, 0)];
    Ok(GeneralizationSplit {
        calibration,
        mismatch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optq::optq_column;
    use crate::sim;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn c2_on_the_identity() {
        let x = CalibrationMatrix::new(DMatrix::identity(4, 4)).unwrap();
        let c2 = compute_c2(&x, 0.5).unwrap();
        assert_relative_eq!(c2 * c2, 1.5, max_relative = 1e-12);
        let cinf = compute_cinf(&x, 0.5).unwrap();
        assert_relative_eq!(cinf * cinf, 1.5, max_relative = 1e-12);
    }

    #[test]
    fn c2_for_identical_columns_recovers_the_row_count() {
        // every column has norm sqrt(m); the cap and the inner max agree
        let m = 5;
        let col = DVector::from_element(m, 1.0);
        let x = CalibrationMatrix::new(DMatrix::from_fn(m, m, |i, _| col[i])).unwrap();
        let lambda = 0.25;
        let c2 = compute_c2(&x, lambda).unwrap();
        assert_relative_eq!(c2 * c2, m as f64 + lambda, max_relative = 1e-10);
    }

    #[test]
    fn c2_is_capped_by_the_mean_squared_column_norm() {
        let x = sim::gaussian_matrix(4, 8, 77);
        let lambda = linops::auto_lambda(&x);
        let c2 = compute_c2(&x, lambda).unwrap();
        let cap = x.frobenius_norm_squared() / 8.0 + lambda;
        assert!(c2 * c2 <= cap * (1.0 + 1e-12));
    }

    #[test]
    fn c2_never_exceeds_cinf() {
        for seed in 0..10 {
            let x = sim::gaussian_matrix(6, 9, 1000 + seed);
            for lambda in [1e-3, 0.1, 1.0, 10.0] {
                let c2 = compute_c2(&x, lambda).unwrap();
                let cinf = compute_cinf(&x, lambda).unwrap();
                assert!(c2 <= cinf * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn tall_data_uses_only_raw_column_norms() {
        let x = sim::gaussian_matrix(9, 4, 31);
        let lambda = 0.3;
        let max_norm_sq = x
            .column_norms()
            .iter()
            .map(|v| v * v)
            .fold(f64::NEG_INFINITY, f64::max);
        let cinf = compute_cinf(&x, lambda).unwrap();
        assert_relative_eq!(cinf * cinf, max_norm_sq + lambda, max_relative = 1e-12);
    }

    #[test]
    fn constants_are_nondecreasing_in_the_dampening() {
        let x = sim::gaussian_matrix(5, 8, 90);
        let grid = [1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0];
        let mut last = (0.0, 0.0);
        for (k, &lambda) in grid.iter().enumerate() {
            let c2 = compute_c2(&x, lambda).unwrap();
            let cinf = compute_cinf(&x, lambda).unwrap();
            if k > 0 {
                assert!(c2 >= last.0 - 1e-12, "lambda {lambda}");
                assert!(cinf >= last.1 - 1e-12, "lambda {lambda}");
            }
            last = (c2, cinf);
        }
    }

    #[test]
    fn invalid_dampening_is_rejected() {
        let x = sim::gaussian_matrix(3, 3, 2);
        assert!(matches!(compute_c2(&x, 0.0), Err(Error::InvalidLambda(_))));
        assert!(matches!(
            compute_cinf(&x, -1.0),
            Err(Error::InvalidLambda(_))
        ));
    }

    #[test]
    fn descending_order_minimizes_the_trailing_norm_maximum() {
        use crate::optq::reorder_descending;
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let x = sim::gaussian_matrix(4, 10, 123);
        let (sorted, _) = reorder_descending(&x);
        let trailing_max = |cm: &CalibrationMatrix| -> f64 {
            let split = cm.ncols().saturating_sub(cm.nrows());
            cm.column_norms()[split..]
                .iter()
                .cloned()
                .fold(0.0, f64::max)
        };
        let sorted_value = trailing_max(&sorted);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let mut perm: Vec<usize> = (0..10).collect();
        for _ in 0..100 {
            perm.shuffle(&mut rng);
            let shuffled = x.select_columns(&perm);
            assert!(sorted_value <= trailing_max(&shuffled) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn augmented_projection_norms_obey_the_conditioning_bound() {
        for seed in 0..10 {
            let x = sim::gaussian_matrix(5, 9, 2000 + seed);
            let lambda = linops::auto_lambda(&x);
            let xh = linops::augment(&x, lambda).unwrap();
            let proj = linops::projection_residual_norms(&xh);
            let sigma = linops::sigma_min_sequence(&x);
            let norms = x.column_norms();
            let split = 9usize.saturating_sub(5);
            for j0 in 0..9 {
                let cap = if j0 < split {
                    lambda * norms[j0] * norms[j0] / (sigma[j0] * sigma[j0] + lambda) + lambda
                } else {
                    norms[j0] * norms[j0] + lambda
                };
                assert!(
                    proj[j0] * proj[j0] <= cap * (1.0 + 1e-10),
                    "seed {seed} col {j0}: {} vs {cap}",
                    proj[j0] * proj[j0]
                );
            }
        }
    }

    #[test]
    fn l2_check_passes_on_realized_runs() {
        for seed in 0..20 {
            let x = sim::gaussian_matrix(16, 8, 3000 + seed);
            let w = sim::uniform_vector(8, -1.0, 1.0, 4000 + seed);
            let lambda = linops::auto_lambda(&x);
            let cfg = QuantConfig {
                lambda: Lambda::Fixed(lambda),
                ..QuantConfig::deterministic(Alphabet::infinite(1.0).unwrap())
            };
            let run = optq_column(&x, &w, &cfg).unwrap();
            let check = check_l2_theorem(&x, &w, &run.q, lambda, 1.0).unwrap();
            assert!(check.pass, "seed {seed}: {check:?}");
            assert!(check.slack >= 0.0);
        }
    }

    #[test]
    fn l2_check_is_trivial_for_grid_valued_weights() {
        let x = sim::gaussian_matrix(8, 4, 5000);
        let w = DVector::from_row_slice(&[1.0, 0.0, -2.0, 1.0]);
        let check = check_l2_theorem(&x, &w, &w, 0.5, 1.0).unwrap();
        assert_eq!(check.realized_combined, 0.0);
        assert!(check.pass);
    }

    #[test]
    fn linf_mc_holds_at_small_scale() {
        let x = sim::gaussian_matrix(12, 6, 6000);
        let w = sim::uniform_dmatrix(6, 1, -1.0, 1.0, 6001);
        let lambda = linops::auto_lambda(&x);
        let report = check_linf_theorem_mc(&x, &w, lambda, 1.0, 2.0, 2.0, 400, 42).unwrap();
        assert!(report.verdict.pass, "{report:?}");
    }

    #[test]
    fn linf_mc_layer_form_uses_both_exponents() {
        let x = sim::gaussian_matrix(10, 5, 6100);
        let w = sim::uniform_dmatrix(5, 8, -1.0, 1.0, 6101);
        let lambda = linops::auto_lambda(&x);
        let report = check_linf_theorem_mc(&x, &w, lambda, 1.0, 2.0, 2.0, 200, 7).unwrap();
        assert!(report.verdict.pass, "{report:?}");
        let single = spread_factor(1.0, 5, 1, 2.0, 2.0);
        let layer = spread_factor(1.0, 5, 8, 2.0, 2.0);
        assert!(layer > single);
    }

    #[test]
    fn tiny_exponent_makes_the_statement_vacuous() {
        let x = sim::gaussian_matrix(12, 6, 6200);
        let w = sim::uniform_dmatrix(6, 1, -1.0, 1.0, 6201);
        let lambda = linops::auto_lambda(&x);
        let report = check_linf_theorem_mc(&x, &w, lambda, 1.0, 0.05, 2.0, 50, 3).unwrap();
        assert!(report.verdict.vacuous);
        assert!(report.verdict.pass);
    }

    #[test]
    fn lowrank_mc_detects_rank_and_holds() {
        let x = sim::low_rank_matrix(8, 6, 2, 6300);
        let w = sim::uniform_dmatrix(6, 1, -1.0, 1.0, 6301);
        let report = check_lowrank_corollary(&x, &w, 2, 1.0, 2.0, 2.0, 300, 11).unwrap();
        assert!(report.verdict.pass, "{report:?}");
        assert!(report.max_midrun_rel_residual < 1e-8, "{report:?}");
        assert_eq!(report.detected_rank, 2);
    }

    #[test]
    fn lowrank_mc_rejects_a_wrong_rank() {
        let x = sim::low_rank_matrix(8, 6, 3, 6400);
        let w = sim::uniform_dmatrix(6, 1, -1.0, 1.0, 6401);
        let err = check_lowrank_corollary(&x, &w, 2, 1.0, 2.0, 2.0, 10, 1).unwrap_err();
        assert!(matches!(
            err,
            Error::RankMismatch {
                detected: 3,
                expected: 2
            }
        ));
    }

    #[test]
    fn full_rank_lowrank_check_reduces_to_the_plain_bound() {
        let x = sim::gaussian_matrix(8, 4, 6500);
        let w = sim::uniform_dmatrix(4, 1, -1.0, 1.0, 6501);
        let report = check_lowrank_corollary(&x, &w, 4, 1.0, 2.0, 2.0, 200, 9).unwrap();
        assert!(report.verdict.pass);
        // with r = N the trailing maximum is over every column
        let all_max = x.column_norms().iter().cloned().fold(0.0, f64::max);
        assert_relative_eq!(
            report.bound,
            spread_factor(1.0, 4, 1, 2.0, 2.0) * all_max,
            max_relative = 1e-12
        );
    }

    #[test]
    fn qronos_l2_bound_holds_on_deterministic_runs() {
        use crate::qronos::{qronos_column, QronosInput};
        for (k, sigma) in [0.0, 0.01, 0.1].into_iter().enumerate() {
            let x = sim::gaussian_matrix(16, 8, 6550 + k as u64);
            let xt = sim::drifted(&x, sigma, 6560 + k as u64);
            let w = sim::uniform_vector(8, -1.0, 1.0, 6570 + k as u64);
            let cfg = QuantConfig {
                lambda: Lambda::Fixed(0.0),
                formulation: Formulation::LeastSquares,
                ..QuantConfig::deterministic(Alphabet::infinite(1.0).unwrap())
            };
            let run = qronos_column(&QronosInput::new(&x, &xt, &w, cfg)).unwrap();
            let check = check_qronos_l2(&x, &xt, &w, &run.q, 1.0).unwrap();
            assert!(check.pass, "sigma {sigma}: {check:?}");
        }
    }

    #[test]
    fn qronos_mc_with_clean_data_has_no_leading_term() {
        let x = sim::gaussian_matrix(10, 5, 6600);
        let w = sim::uniform_dmatrix(5, 1, -1.0, 1.0, 6601);
        let report = check_qronos_linf_mc(&x, &x, &w, 1.0, 2.0, 2.0, 200, 21).unwrap();
        assert!(report.leading_linf < 1e-10);
        assert!(report.verdict.pass, "{report:?}");
    }

    #[test]
    fn qronos_mc_holds_under_drift() {
        let x = sim::gaussian_matrix(12, 6, 6700);
        let xt = sim::drifted(&x, 0.05, 6701);
        let w = sim::uniform_dmatrix(6, 2, -1.0, 1.0, 6702);
        let report = check_qronos_linf_mc(&x, &xt, &w, 1.0, 2.0, 2.0, 300, 23).unwrap();
        assert!(report.verdict.pass, "{report:?}");
    }

    #[test]
    fn generalization_split_sums_to_the_holdout_mean() {
        let x = sim::gaussian_matrix(20, 6, 6800);
        let w = sim::uniform_vector(6, -1.0, 1.0, 6801);
        let q = crate::alphabet::msq_vector(&w, &Alphabet::infinite(0.5).unwrap());
        let z = sim::gaussian_dmatrix(15, 6, 6802);
        let split = generalization_decomposition(&x, &w, &q, &z).unwrap();
        let d = &w - &q;
        let holdout = (&z * d).norm_squared() / 15.0;
        assert_relative_eq!(
            split.calibration + split.mismatch,
            holdout,
            max_relative = 1e-10
        );
    }

    #[test]
    fn generalization_split_degenerate_cases() {
        let x = sim::gaussian_matrix(10, 4, 6900);
        let w = sim::uniform_vector(4, -1.0, 1.0, 6901);
        // identical rows: the mismatch term cancels exactly
        let q = crate::alphabet::msq_vector(&w, &Alphabet::infinite(1.0).unwrap());
        let split = generalization_decomposition(&x, &w, &q, x.matrix()).unwrap();
        assert!(split.mismatch.abs() < 1e-10);
        // quantized equals original: both terms vanish
        let split = generalization_decomposition(&x, &w, &w, x.matrix()).unwrap();
        assert_eq!(split.calibration, 0.0);
        assert_eq!(split.mismatch, 0.0);
    }

    #[test]
    fn p_solver_inverts_the_tail_mass() {
        let (m, n, n_prime) = (32, 16, 4);
        let eps = 0.05;
        let p = p_for_target_failure(m, n, n_prime, eps);
        let mass = tail_probability(m, n, n_prime, p, 2.0);
        assert_relative_eq!(mass, eps, max_relative = 1e-10);
    }

    #[test]
    fn bound_report_is_internally_consistent() {
        let x = sim::gaussian_matrix(12, 6, 7000);
        let lambda = linops::auto_lambda(&x);
        let report = bound_report(&x, lambda, 0.5, 2.0, 2.0, 1).unwrap();
        assert_eq!(report.proj_norms.len(), 6);
        assert_eq!(report.sigma_mins.len(), 6);
        assert_relative_eq!(
            report.l2_bound_wq,
            report.l2_bound_xwq / lambda.sqrt(),
            max_relative = 1e-12
        );
        assert!(report.failure_prob >= 0.0 && report.failure_prob <= 1.0);
    }
}
