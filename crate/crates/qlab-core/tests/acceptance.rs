//! Acceptance suite: one test per exit criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them on success).
//!
//! Every tolerance is pinned here, not computed from the run.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use qlab_core::adversarial::build_instance;
use qlab_core::alphabet::msq_vector;
use qlab_core::bounds::{
    check_l2_theorem, check_linf_theorem_mc, check_lowrank_corollary, tail_probability,
};
use qlab_core::linops::{augment, auto_lambda, projection_residual_norms, sigma_min_sequence};
use qlab_core::optq::{error_decomposition, optq_column};
use qlab_core::oracle::brute_force_ils;
use qlab_core::qronos::{qronos_column, qronos_error_decomposition};
use qlab_core::sim;
use qlab_core::{
    Alphabet, ColumnOrdering, Formulation, Lambda, QronosInput, QuantConfig, RoundingMode,
};

fn run_criterion(id: u32, name: &str, body: impl FnOnce() -> Result<String, String>) {
    let started = Instant::now();
    let outcome = body();
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => println!("acceptance {id:02} {name}: PASS [{secs:.2}s] {detail}"),
        Err(msg) => {
            println!("acceptance {id:02} {name}: FAIL [{secs:.2}s] {msg}");
            panic!("acceptance criterion {id} ({name}) failed: {msg}");
        }
    }
}

fn det_cfg(formulation: Formulation, lambda: Lambda) -> QuantConfig {
    QuantConfig {
        lambda,
        ordering: ColumnOrdering::None,
        formulation,
        alphabet: Alphabet::infinite(1.0).unwrap(),
        rounding: RoundingMode::Deterministic,
    }
}

#[test]
fn acceptance_01_formulation_equivalence() {
    run_criterion(1, "formulation equivalence", || {
        let started = Instant::now();
        for seed in 0..200u64 {
            let x = sim::gaussian_matrix(32, 16, 10_000 + seed);
            let w = sim::uniform_vector(16, -1.0, 1.0, 20_000 + seed);
            for lambda in [Lambda::Auto, Lambda::Fixed(0.1)] {
                let chol = optq_column(&x, &w, &det_cfg(Formulation::Cholesky, lambda))
                    .map_err(|e| e.to_string())?;
                let ls = optq_column(&x, &w, &det_cfg(Formulation::LeastSquares, lambda))
                    .map_err(|e| e.to_string())?;
                if chol.q != ls.q {
                    return Err(format!("outputs differ on seed {seed}, lambda {lambda:?}"));
                }
            }
        }
        let secs = started.elapsed().as_secs_f64();
        if secs >= 30.0 {
            return Err(format!("runtime {secs:.1}s exceeds the 30s budget"));
        }
        Ok("200 instances x 2 dampenings, identical grid vectors".into())
    });
}

#[test]
fn acceptance_02_error_identity() {
    run_criterion(2, "per-step error identity", || {
        for seed in 0..200u64 {
            let x = sim::gaussian_matrix(32, 16, 10_000 + seed);
            let w = sim::uniform_vector(16, -1.0, 1.0, 20_000 + seed);
            let run = optq_column(&x, &w, &det_cfg(Formulation::Cholesky, Lambda::Fixed(0.0)))
                .map_err(|e| e.to_string())?;
            let decomp = error_decomposition(&x, &w, &run).map_err(|e| e.to_string())?;

            let proj = projection_residual_norms(&x);
            let term_sum: f64 = run
                .trace
                .residues
                .iter()
                .zip(&proj)
                .map(|(r, p)| r * r * p * p)
                .sum();
            let realized = decomp.e_n.norm_squared();
            let rel = (term_sum - realized).abs() / realized;
            if rel >= 1e-8 {
                return Err(format!("seed {seed}: norm identity off by {rel:.3e}"));
            }
            if decomp.reconstruction_rel_error() >= 1e-8 {
                return Err(format!(
                    "seed {seed}: vector identity off by {:.3e}",
                    decomp.reconstruction_rel_error()
                ));
            }
            for i in 0..16 {
                for j in i + 1..16 {
                    let denom = decomp.terms[i].norm() * decomp.terms[j].norm();
                    if denom < 1e-300 {
                        continue;
                    }
                    let ip = decomp.terms[i].dot(&decomp.terms[j]) / denom;
                    if ip.abs() >= 1e-8 {
                        return Err(format!("seed {seed}: terms {i},{j} not orthogonal: {ip:.3e}"));
                    }
                }
            }
        }
        Ok("200 instances, squared-norm and vector identities to 1e-8".into())
    });
}

#[test]
fn acceptance_03_l2_bound_sweep() {
    run_criterion(3, "deterministic l2 bound", || {
        let started = Instant::now();
        let mut count = 0usize;
        let mut min_slack = f64::INFINITY;
        for (m, n) in [(8usize, 16usize), (8, 64), (32, 16), (32, 64)] {
            for k in 0..250u64 {
                let seed = 30_000 + 1000 * (m as u64) + 10 * (n as u64) + k;
                let x = sim::gaussian_matrix(m, n, seed);
                let w = sim::uniform_vector(n, -1.0, 1.0, seed + 7);
                let lambda = auto_lambda(&x);
                let run = optq_column(&x, &w, &det_cfg(Formulation::Cholesky, Lambda::Auto))
                    .map_err(|e| e.to_string())?;
                let check =
                    check_l2_theorem(&x, &w, &run.q, lambda, 1.0).map_err(|e| e.to_string())?;
                if !check.pass {
                    return Err(format!("violation at m={m}, n={n}, seed {seed}: {check:?}"));
                }
                min_slack = min_slack.min(check.slack);
                count += 1;
            }
        }
        let secs = started.elapsed().as_secs_f64();
        if secs >= 120.0 {
            return Err(format!("runtime {secs:.1}s exceeds the 2min budget"));
        }
        Ok(format!("{count} instances, zero violations, min slack {min_slack:.3e}"))
    });
}

#[test]
fn acceptance_04_adversarial_scaling() {
    run_criterion(4, "adversarial scaling", || {
        for n in [4usize, 16, 64, 256] {
            let inst = build_instance(n).map_err(|e| e.to_string())?;
            let run = optq_column(
                &inst.x,
                &inst.w,
                &det_cfg(Formulation::Cholesky, Lambda::Fixed(0.0)),
            )
            .map_err(|e| e.to_string())?;
            if run.q != inst.expected_q {
                return Err(format!("N={n}: quantizer did not reproduce the expected output"));
            }
            let err = inst.x.matrix() * (&inst.w - &run.q);
            let linf = err.amax();
            let drift = (&inst.w - &run.q).amax();
            let expected_linf = (n as f64).sqrt() / 3.0;
            let expected_drift = n as f64 / 3.0;
            if (linf - expected_linf).abs() > 1e-9 {
                return Err(format!("N={n}: linf error {linf} vs {expected_linf}"));
            }
            if (drift - expected_drift).abs() > 1e-9 {
                return Err(format!("N={n}: weight drift {drift} vs {expected_drift}"));
            }
            if n == 4 {
                let ramp = DVector::from_fn(4, |i, _| (i + 1) as f64 / 3.0);
                if &inst.w - &run.q != ramp {
                    return Err("N=4: drift is not exactly (1,2,3,4)/3".into());
                }
            }
        }
        Ok("N in {4,16,64,256}: exact outputs, sqrt(N)/3 and N/3 scaling".into())
    });
}

#[test]
fn acceptance_05_stochastic_linf_bound() {
    run_criterion(5, "stochastic entrywise bound", || {
        let started = Instant::now();
        let (m, n, trials) = (32usize, 16usize, 10_000usize);
        let x = sim::gaussian_matrix(m, n, 40_000);
        let w = sim::uniform_dmatrix(n, 1, -1.0, 1.0, 40_001);
        let lambda = auto_lambda(&x);
        let report = check_linf_theorem_mc(&x, &w, lambda, 1.0, 2.0, 2.0, trials, 40_002)
            .map_err(|e| e.to_string())?;
        let predicted = tail_probability(m + n, n, 1, 2.0, 2.0).clamp(0.0, 1.0);
        let se = (predicted * (1.0 - predicted) / trials as f64).sqrt();
        let xwq_rate = report.xwq_violations as f64 / trials as f64;
        if xwq_rate > predicted + 3.0 * se {
            return Err(format!("xwq violation rate {xwq_rate} above {predicted} + 3se"));
        }
        if !report.verdict.pass {
            return Err(format!("joint verdict failed: {:?}", report.verdict));
        }
        let secs = started.elapsed().as_secs_f64();
        if secs >= 300.0 {
            return Err(format!("runtime {secs:.1}s exceeds the 5min budget"));
        }
        Ok(format!(
            "{trials} trials, xwq rate {xwq_rate:.4} vs allowed {:.4}",
            predicted + 3.0 * se
        ))
    });
}

#[test]
fn acceptance_06_unbiasedness() {
    run_criterion(6, "stochastic unbiasedness", || {
        use rand::SeedableRng;
        let alphabet = Alphabet::finite_symmetric(0.25, 3).unwrap();
        let delta = 0.25;
        let draws = 100_000usize;
        let tol = 4.0 * delta / (draws as f64).sqrt();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(50_000);
        for k in 0..20 {
            // interior points, clear of the +-1.0 grid edge
            let z = -0.95 + 1.9 * (k as f64 + 0.5) / 20.0;
            let mean: f64 =
                (0..draws).map(|_| alphabet.stoc(z, &mut rng)).sum::<f64>() / draws as f64;
            if (mean - z).abs() > tol {
                return Err(format!("point {z:.3}: mean {mean:.5} off by more than {tol:.5}"));
            }
        }
        Ok(format!("20 interior points x {draws} draws within {tol:.2e}"))
    });
}

#[test]
fn acceptance_07_oracle_dominance() {
    // NOTE: the exhaustive-solver clause (oracle <= greedy) is a theorem
    // and holds on every instance. The greedy <= plain-rounding clause is
    // asserted as stated but is not a theorem: the greedy step relaxes
    // the trailing coordinates to reals, and on a few percent of random
    // instances the realized greedy error exceeds plain rounding (only
    // the worst-case *bounds* are ordered). Expect this clause to fail
    // on isolated seeds; the failure message lists them.
    run_criterion(7, "oracle dominance", || {
        let grid = Alphabet::finite_symmetric(1.0, 1).unwrap();
        let cfg = QuantConfig {
            alphabet: grid,
            ..det_cfg(Formulation::LeastSquares, Lambda::Fixed(0.0))
        };
        let mut oracle_violations: Vec<u64> = Vec::new();
        let mut greedy_violations: Vec<u64> = Vec::new();
        for seed in 0..100u64 {
            let x = sim::gaussian_matrix(6, 4, 60_000 + seed);
            let w = sim::uniform_vector(4, -1.0, 1.0, 61_000 + seed);
            let oracle = brute_force_ils(&x, &w, &grid, 1 << 20).map_err(|e| e.to_string())?;
            let optq = optq_column(&x, &w, &cfg).map_err(|e| e.to_string())?;
            let objective = |q: &DVector<f64>| (x.matrix() * &w - x.matrix() * q).norm_squared();
            let optq_obj = objective(&optq.q);
            let msq_obj = objective(&msq_vector(&w, &grid));
            let slack = 1e-10 * (1.0 + msq_obj);
            if oracle.objective > optq_obj + slack {
                oracle_violations.push(seed);
            }
            if optq_obj > msq_obj + slack {
                greedy_violations.push(seed);
            }
        }
        if !oracle_violations.is_empty() {
            return Err(format!(
                "exhaustive solver beaten on seeds {oracle_violations:?}"
            ));
        }
        if !greedy_violations.is_empty() {
            return Err(format!(
                "greedy exceeded plain rounding on {} of 100 seeds {greedy_violations:?}; \
                 only the worst-case bounds are ordered, not per-instance errors",
                greedy_violations.len()
            ));
        }
        // orthogonal columns: all three coincide exactly
        for seed in 0..10u64 {
            let scales = sim::uniform_vector(4, 0.5, 2.0, 62_000 + seed);
            let mut data = DMatrix::zeros(6, 4);
            for j in 0..4 {
                data[(j, j)] = scales[j];
            }
            let x = qlab_core::CalibrationMatrix::new(data).unwrap();
            let w = sim::uniform_vector(4, -1.4, 1.4, 63_000 + seed);
            let oracle = brute_force_ils(&x, &w, &grid, 1 << 20).map_err(|e| e.to_string())?;
            let optq = optq_column(&x, &w, &cfg).map_err(|e| e.to_string())?;
            let msq = msq_vector(&w, &grid);
            if oracle.q_star != msq || optq.q != msq {
                return Err(format!("seed {seed}: orthogonal-column outputs differ"));
            }
        }
        Ok("100 instances dominated, 10 orthogonal instances exactly equal".into())
    });
}

#[test]
fn acceptance_08_qronos_error_formula() {
    run_criterion(8, "qronos error formula", || {
        let cfg = det_cfg(Formulation::LeastSquares, Lambda::Fixed(0.0));
        let sigmas = [0.0, 0.01, 0.1];
        for k in 0..200u64 {
            let sigma = sigmas[(k % 3) as usize];
            let x = sim::gaussian_matrix(32, 16, 70_000 + k);
            let xt = sim::drifted(&x, sigma, 71_000 + k);
            let w = sim::uniform_vector(16, -1.0, 1.0, 72_000 + k);
            let input = QronosInput::new(&x, &xt, &w, cfg);
            let run = qronos_column(&input).map_err(|e| e.to_string())?;
            let decomp = qronos_error_decomposition(&input, &run).map_err(|e| e.to_string())?;
            if decomp.reconstruction_rel_error() >= 1e-8 {
                return Err(format!(
                    "k={k} sigma={sigma}: reconstruction off by {:.3e}",
                    decomp.reconstruction_rel_error()
                ));
            }
            let drift_norm = (x.matrix() * &w - xt.matrix() * &w).norm();
            if decomp.leading.norm() > drift_norm * (1.0 + 1e-12) + 1e-300 {
                return Err(format!("k={k}: leading term grew past the raw drift"));
            }
            if sigma == 0.0 {
                let optq = optq_column(&x, &w, &cfg).map_err(|e| e.to_string())?;
                if run.q != optq.q {
                    return Err(format!("k={k}: clean-data run differs from the greedy baseline"));
                }
            }
        }
        Ok("200 drifted instances: identity to 1e-8, contraction, clean-data equality".into())
    });
}

#[test]
fn acceptance_09_lowrank_corollary() {
    run_criterion(9, "low-rank corollary", || {
        let x = sim::low_rank_matrix(16, 12, 2, 80_000);
        let w = sim::uniform_dmatrix(12, 1, -1.0, 1.0, 80_001);
        let report = check_lowrank_corollary(&x, &w, 2, 1.0, 2.0, 2.0, 10_000, 80_002)
            .map_err(|e| e.to_string())?;
        if report.max_midrun_rel_residual >= 1e-8 {
            return Err(format!(
                "mid-run residual {:.3e} past step N-r",
                report.max_midrun_rel_residual
            ));
        }
        if !report.verdict.pass {
            return Err(format!("tail verdict failed: {:?}", report.verdict));
        }
        Ok(format!(
            "10000 trials, rate {:.4} vs allowed {:.4}, mid-run residual {:.1e}",
            report.verdict.empirical_rate,
            report.verdict.predicted_rate + report.verdict.allowance,
            report.max_midrun_rel_residual
        ))
    });
}

#[test]
fn acceptance_10_sigma_monotonicity_and_projection_bound() {
    run_criterion(10, "trailing-block spectrum", || {
        for seed in 0..100u64 {
            let (m, n) = (6usize, 12usize);
            let x = sim::gaussian_matrix(m, n, 90_000 + seed);
            let sigma = sigma_min_sequence(&x);
            for j in 1..(n - m) {
                if sigma[j] > sigma[j - 1] * (1.0 + 1e-12) {
                    return Err(format!("seed {seed}: sigma_min increased at j={j}"));
                }
            }
            let lambda = auto_lambda(&x);
            let xh = augment(&x, lambda).map_err(|e| e.to_string())?;
            let proj = projection_residual_norms(&xh);
            let norms = x.column_norms();
            for j0 in 0..n {
                let cap = if j0 < n - m {
                    lambda * norms[j0] * norms[j0] / (sigma[j0] * sigma[j0] + lambda) + lambda
                } else {
                    norms[j0] * norms[j0] + lambda
                };
                if proj[j0] * proj[j0] > cap * (1.0 + 1e-10) {
                    return Err(format!(
                        "seed {seed} col {j0}: projection norm {} above cap {cap}",
                        proj[j0] * proj[j0]
                    ));
                }
            }
        }
        Ok("100 wide Gaussian instances: monotone spectrum, projection caps hold".into())
    });
}

#[test]
fn acceptance_11_large_dampening_degeneration() {
    run_criterion(11, "large-dampening degeneration", || {
        let alphabet = Alphabet::infinite(1.0).unwrap();
        for seed in 0..100u64 {
            let x = sim::gaussian_matrix(16, 8, 95_000 + seed);
            let w = sim::uniform_vector(8, -1.0, 1.0, 96_000 + seed);
            let lambda = 1e12 * x.frobenius_norm_squared();
            let run = optq_column(&x, &w, &det_cfg(Formulation::Cholesky, Lambda::Fixed(lambda)))
                .map_err(|e| e.to_string())?;
            if run.q != msq_vector(&w, &alphabet) {
                return Err(format!("seed {seed}: output differs from plain rounding"));
            }
        }
        Ok("100 instances collapse to coordinatewise rounding".into())
    });
}
