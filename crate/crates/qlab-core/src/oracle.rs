//! Exact brute-force solver for `min ||Xw - Xq||^2` over grid vectors,
//! the optimality reference at toy sizes.
//!
//! Enumeration runs depth-first over a QR triangularization so partial
//! objectives are monotone and subtrees can be pruned; pruning is strict,
//! which keeps the lexicographic tie-break exact.

use nalgebra::{DMatrix, DVector};

use crate::alphabet::Alphabet;
use crate::error::{Error, Result};
use crate::linops::CalibrationMatrix;

/// Global minimizer of the integer least-squares objective.
#[derive(Debug, Clone)]
pub struct IlsSolution {
    pub q_star: DVector<f64>,
    /// `||Xw - X q_star||^2`.
    pub objective: f64,
    /// Search-tree nodes expanded, leaves included.
    pub nodes_visited: u64,
}

struct Search<'a> {
    r: &'a DMatrix<f64>,
    levels: &'a [f64],
    w: &'a DVector<f64>,
    rows: usize,
    q: Vec<f64>,
    acc: Vec<f64>,
    best_obj: f64,
    best_q: Vec<f64>,
    nodes: u64,
}

impl Search<'_> {
    /// Assign coordinate `t` (descending); `partial` is the exact
    /// objective contribution of the already-complete rows `> t`.
    fn descend(&mut self, t: usize, partial: f64) {
        for &level in self.levels {
            self.nodes += 1;
            let d = self.w[t] - level;
            // fold this coordinate into every row it touches
            let top = t.min(self.rows - 1);
            for i in 0..=top {
                self.acc[i] += self.r[(i, t)] * d;
            }
            // row t is now complete (when it exists)
            let row_term = if t < self.rows {
                self.acc[t] * self.acc[t]
            } else {
                0.0
            };
            let next_partial = partial + row_term;
            // strict comparison: equal-objective subtrees must stay
            // visible to the lexicographic tie-break
            if next_partial <= self.best_obj {
                self.q[t] = level;
                if t == 0 {
                    self.record_leaf(next_partial);
                } else {
                    self.descend(t - 1, next_partial);
                }
            }
            for i in 0..=top {
                self.acc[i] -= self.r[(i, t)] * d;
            }
        }
    }

    fn record_leaf(&mut self, objective: f64) {
        if objective < self.best_obj
            || (objective == self.best_obj && lex_less(&self.q, &self.best_q))
        {
            self.best_obj = objective;
            self.best_q = self.q.clone();
        }
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Exhaustively minimize `||Xw - Xq||^2` over the finite grid. The grid
/// must have at most `budget` vectors; ties resolve to the
/// lexicographically smallest minimizer.
pub fn brute_force_ils(
    x: &CalibrationMatrix,
    w: &DVector<f64>,
    alphabet: &Alphabet,
    budget: u128,
) -> Result<IlsSolution> {
    let n = x.ncols();
    if w.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "weight vector has {} entries, data has {n} columns",
            w.len()
        )));
    }
    let levels = alphabet.levels().ok_or_else(|| {
        Error::InvalidAlphabet("exhaustive search needs a finite alphabet".into())
    })?;
    let card = levels.len() as u128;
    let needed = card
        .checked_pow(n as u32)
        .ok_or(Error::BudgetExceeded {
            needed: u128::MAX,
            budget,
        })?;
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }

    // X = QR leaves the objective ||R (w - q)||^2 with R upper triangular,
    // so rows complete one at a time as coordinates are fixed from the end
    let qr = x.matrix().clone().qr();
    let r = qr.r();
    let rows = r.nrows();

    let mut search = Search {
        r: &r,
        levels: &levels,
        w,
        rows,
        q: vec![0.0; n],
        acc: vec![0.0; rows],
        best_obj: f64::INFINITY,
        best_q: Vec::new(),
        nodes: 0,
    };
    search.descend(n - 1, 0.0);

    let q_star = DVector::from_vec(search.best_q);
    // recompute the objective directly so the reported value is exact for
    // the reported minimizer, independent of the pruning arithmetic
    let objective = (x.matrix() * w - x.matrix() * &q_star).norm_squared();
    Ok(IlsSolution {
        q_star,
        objective,
        nodes_visited: search.nodes,
    })
}
