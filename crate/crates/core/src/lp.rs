//! Dense two-phase tableau simplex for small equality-form linear programs:
//!
//! ```text
//! maximize c^T x   subject to   A x = b,  x >= 0
//! ```
//!
//! Sized for occupancy-measure programs at desk scale (a few hundred columns).
//! Dantzig pricing with a switch to Bland's rule after a run of degenerate pivots.
//! Optimal duals `y` (with `A^T y >= c` at optimum) are read from the columns of the
//! phase-one artificials, which start as the identity and therefore end as `B^{-1}`.

use crate::error::{Error, Result};

/// Pivot / feasibility / optimality tolerance.
pub const LP_TOL: f64 = 1e-9;
/// Phase-one residual above which the program is declared infeasible.
pub const INFEASIBLE_TOL: f64 = 1e-8;

const DEGENERATE_RUN_BEFORE_BLAND: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    /// Dense equality rows `(a_i, b_i)`.
    pub rows: Vec<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// One dual per row, sign convention `c_j - y^T A_j <= 0` at optimum.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    /// Smallest achievable `sum |A x - b|` over `x >= 0`.
    Infeasible { residual: f64 },
}

struct Tableau {
    /// `m` rows of width `n + m + 1`: structural columns, artificials, rhs.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n: usize,
    m: usize,
    iterations: usize,
    max_iterations: usize,
}

impl Tableau {
    fn width(&self) -> usize {
        self.n + self.m + 1
    }

    fn rhs(&self, i: usize) -> f64 {
        self.t[i][self.n + self.m]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width();
        let p = self.t[row][col];
        for j in 0..w {
            self.t[row][j] /= p;
        }
        self.t[row][col] = 1.0;
        let pivot_row = self.t[row].clone();
        for (i, r) in self.t.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let f = r[col];
            if f != 0.0 {
                for j in 0..w {
                    r[j] -= f * pivot_row[j];
                }
                r[col] = 0.0;
            }
        }
        self.basis[row] = col;
        self.iterations += 1;
    }

    /// Reduced costs `c_j - c_B^T B^{-1} A_j` for the given cost vector over all columns.
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let w = self.width() - 1;
        let mut red = cost.to_vec();
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                for j in 0..w {
                    red[j] -= cb * self.t[i][j];
                }
            }
        }
        red
    }

    /// Maximize `cost` over the current basis, letting only `allowed` columns enter.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Result<()> {
        let mut degenerate_run = 0usize;
        loop {
            if self.iterations >= self.max_iterations {
                return Err(Error::Numerical(format!(
                    "simplex did not converge within {} pivots",
                    self.max_iterations
                )));
            }
            let red = self.reduced_costs(cost);
            let bland = degenerate_run >= DEGENERATE_RUN_BEFORE_BLAND;
            let entering = if bland {
                (0..allowed).find(|&j| red[j] > LP_TOL)
            } else {
                (0..allowed)
                    .filter(|&j| red[j] > LP_TOL)
                    .max_by(|&a, &b| red[a].total_cmp(&red[b]).then(b.cmp(&a)))
            };
            let Some(col) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.t[i][col];
                if a > LP_TOL {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - LP_TOL
                                || ((ratio - lr).abs() <= LP_TOL && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((row, ratio)) = leave else {
                return Err(Error::Numerical("linear program is unbounded".into()));
            };
            if ratio.abs() <= LP_TOL {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(row, col);
        }
    }
}

/// Solve a linear program in equality form.
pub fn solve(lp: &LinearProgram) -> Result<LpOutcome> {
    let n = lp.objective.len();
    let m = lp.rows.len();
    if let Some(i) = lp.rows.iter().position(|(a, _)| a.len() != n) {
        return Err(Error::Shape(format!("row {i} has {} columns, expected {n}", lp.rows[i].0.len())));
    }
    if lp
        .rows
        .iter()
        .any(|(a, b)| !b.is_finite() || a.iter().any(|v| !v.is_finite()))
        || lp.objective.iter().any(|v| !v.is_finite())
    {
        return Err(Error::InvalidInput("linear program has non-finite data".into()));
    }

    // Flip rows so every rhs is nonnegative; remember the flips for the duals.
    let mut signs = vec![1.0; m];
    let mut t = Vec::with_capacity(m);
    for (i, (a, b)) in lp.rows.iter().enumerate() {
        let s = if *b < 0.0 { -1.0 } else { 1.0 };
        signs[i] = s;
        let mut row = vec![0.0; n + m + 1];
        for (dst, v) in row.iter_mut().zip(a) {
            *dst = s * v;
        }
        row[n + i] = 1.0;
        row[n + m] = s * b;
        t.push(row);
    }
    let mut tab = Tableau {
        t,
        basis: (n..n + m).collect(),
        n,
        m,
        iterations: 0,
        max_iterations: 50 * (n + m) + 1000,
    };

    // Phase one: maximize -(sum of artificials).
    let mut phase_one = vec![0.0; n + m];
    phase_one[n..].iter_mut().for_each(|c| *c = -1.0);
    tab.optimize(&phase_one, n)?;
    let residual: f64 = tab
        .basis
        .iter()
        .enumerate()
        .filter(|(_, &b)| b >= n)
        .map(|(i, _)| tab.rhs(i).abs())
        .sum();
    if residual > INFEASIBLE_TOL {
        return Ok(LpOutcome::Infeasible { residual });
    }
    // Drive zero-level artificials out of the basis where a structural pivot exists;
    // rows without one are redundant and keep their artificial at zero.
    for i in 0..m {
        if tab.basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| tab.t[i][j].abs() > 1e-7) {
                tab.pivot(i, j);
            }
        }
    }

    let mut cost = lp.objective.clone();
    cost.extend(std::iter::repeat_n(0.0, m));
    tab.optimize(&cost, n)?;

    let mut x = vec![0.0; n];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.rhs(i).max(0.0);
        }
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    // y^T = c_B^T B^{-1}; B^{-1} sits in the artificial columns.
    let duals = (0..m)
        .map(|k| {
            let y: f64 = tab
                .basis
                .iter()
                .enumerate()
                .map(|(i, &b)| cost[b] * tab.t[i][n + k])
                .sum();
            y * signs[k]
        })
        .collect();
    Ok(LpOutcome::Optimal(LpSolution {
        x,
        objective,
        duals,
        iterations: tab.iterations,
    }))
}
