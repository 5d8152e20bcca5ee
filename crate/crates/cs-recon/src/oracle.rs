//! Exact l1 minimization at small scale, used as ground truth for the
//! iterative solvers.
//!
//! Two independent methods: a two-phase primal simplex on the standard
//! split formulation min sum(u + v) s.t. F(u - v) = y, u, v >= 0, and a
//! brute-force enumeration of basic solutions. Both flag instances whose
//! minimizer is not unique, since downstream success metrics presume a
//! unique sparsest point.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::model::{linf_diff, ProblemInstance, SensingMatrix};
use crate::{Error, Result};

/// Entering/tie tolerance on simplex reduced costs.
const REDUCED_COST_TOL: f64 = 1e-9;
/// Smallest pivot magnitude accepted by elimination routines.
const PIVOT_TOL: f64 = 1e-10;
/// Solutions counting as the same optimum must agree to this in max norm.
const DISTINCT_SOLUTION_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Another solution with a different support attains the same objective
    /// within 1e-9; the returned x_star is one of the optima.
    DegenerateTie,
}

/// Result of an exact minimization. `objective` and `x_star` are meaningful
/// only for Optimal and DegenerateTie; other statuses return zeros.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution {
    pub x_star: Vec<f64>,
    pub objective: f64,
    pub status: LpStatus,
}

impl LpSolution {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    fn degenerate(n: usize, status: LpStatus) -> Self {
        Self {
            x_star: vec![0.0; n],
            objective: 0.0,
            status,
        }
    }
}

/// Row rank by Gaussian elimination with partial pivoting.
fn row_rank(f: &SensingMatrix, tol: f64) -> usize {
    let (m, n) = (f.rows(), f.cols());
    let mut work = f.entries().to_vec();
    let mut rank = 0;
    for col in 0..n {
        if rank == m {
            break;
        }
        let mut piv = rank;
        for r in rank + 1..m {
            if work[r * n + col].abs() > work[piv * n + col].abs() {
                piv = r;
            }
        }
        if work[piv * n + col].abs() < tol {
            continue;
        }
        if piv != rank {
            for k in 0..n {
                work.swap(piv * n + k, rank * n + k);
            }
        }
        for r in rank + 1..m {
            let factor = work[r * n + col] / work[rank * n + col];
            if factor != 0.0 {
                for k in col..n {
                    work[r * n + k] -= factor * work[rank * n + k];
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Dense tableau simplex state. The body always holds B^-1 A, so reduced
/// costs are c_j - c_B . a_j directly.
struct Tableau {
    m: usize,
    /// Structural columns: u block then v block, 2N total.
    n_struct: usize,
    /// Structural plus artificial columns.
    ncols: usize,
    a: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn new(f: &SensingMatrix, y: &[f64]) -> Self {
        let (m, n) = (f.rows(), f.cols());
        let n_struct = 2 * n;
        let ncols = n_struct + m;
        let mut a = vec![0.0; m * ncols];
        let mut rhs = vec![0.0; m];
        for r in 0..m {
            // Flip rows with negative observations so the artificial basis
            // starts feasible.
            let sign = if y[r] < 0.0 { -1.0 } else { 1.0 };
            rhs[r] = sign * y[r];
            for j in 0..n {
                let e = sign * f.entries()[r * n + j];
                a[r * ncols + j] = e;
                a[r * ncols + n + j] = -e;
            }
            a[r * ncols + n_struct + r] = 1.0;
        }
        let basis = (n_struct..ncols).collect();
        Self {
            m,
            n_struct,
            ncols,
            a,
            rhs,
            basis,
        }
    }

    fn cost(&self, j: usize, phase_one: bool) -> f64 {
        if phase_one {
            if j < self.n_struct {
                0.0
            } else {
                1.0
            }
        } else {
            // Artificial columns never re-enter in phase two.
            debug_assert!(j < self.n_struct);
            1.0
        }
    }

    fn reduced_cost(&self, j: usize, phase_one: bool) -> f64 {
        let mut r = self.cost(j, phase_one);
        for (row, &b) in self.basis.iter().enumerate() {
            let cb = self.cost(b, phase_one);
            if cb != 0.0 {
                r -= cb * self.a[row * self.ncols + j];
            }
        }
        r
    }

    /// Smallest-index entering column with significantly negative reduced
    /// cost (Bland's rule), restricted to structural columns in phase two.
    fn entering(&self, phase_one: bool) -> Option<usize> {
        let limit = if phase_one { self.ncols } else { self.n_struct };
        (0..limit).find(|&j| {
            !self.basis.contains(&j) && self.reduced_cost(j, phase_one) < -REDUCED_COST_TOL
        })
    }

    /// Minimum-ratio leaving row for column j; ties broken by the smallest
    /// basic variable index (Bland). None when the column is unbounded.
    fn leaving(&self, j: usize) -> Option<usize> {
        let mut best: Option<(f64, usize, usize)> = None;
        for row in 0..self.m {
            let aij = self.a[row * self.ncols + j];
            if aij > REDUCED_COST_TOL {
                let ratio = self.rhs[row].max(0.0) / aij;
                let candidate = (ratio, self.basis[row], row);
                best = Some(match best {
                    None => candidate,
                    Some(cur) => {
                        if ratio < cur.0 * (1.0 - 1e-12) - 1e-300 {
                            candidate
                        } else if ratio <= cur.0 * (1.0 + 1e-12) && candidate.1 < cur.1 {
                            candidate
                        } else {
                            cur
                        }
                    }
                });
            }
        }
        best.map(|(_, _, row)| row)
    }

    fn pivot(&mut self, row: usize, j: usize) {
        let nc = self.ncols;
        let piv = self.a[row * nc + j];
        for k in 0..nc {
            self.a[row * nc + k] /= piv;
        }
        self.rhs[row] /= piv;
        for r in 0..self.m {
            if r == row {
                continue;
            }
            let factor = self.a[r * nc + j];
            if factor != 0.0 {
                for k in 0..nc {
                    self.a[r * nc + k] -= factor * self.a[row * nc + k];
                }
                self.rhs[r] -= factor * self.rhs[row];
                if self.rhs[r] < 0.0 && self.rhs[r] > -1e-11 {
                    self.rhs[r] = 0.0;
                }
            }
        }
        self.basis[row] = j;
    }

    /// Runs Bland-rule iterations for one phase. Ok(true) means optimal,
    /// Ok(false) means an unbounded entering column was hit.
    fn optimize(&mut self, phase_one: bool, budget: &mut usize) -> Result<bool> {
        while let Some(j) = self.entering(phase_one) {
            if *budget == 0 {
                return Err(Error::IterationCap {
                    cap: 50 * (self.n_struct / 2 + self.m),
                });
            }
            *budget -= 1;
            match self.leaving(j) {
                Some(row) => self.pivot(row, j),
                None => return Ok(false),
            }
        }
        Ok(true)
    }

    fn objective(&self, phase_one: bool) -> f64 {
        self.basis
            .iter()
            .enumerate()
            .map(|(row, &b)| self.cost(b, phase_one) * self.rhs[row])
            .sum()
    }

    /// Pivots any artificial variable out of the basis after phase one.
    /// Full row rank guarantees a structural pivot exists in every row.
    fn expel_artificials(&mut self) -> Result<()> {
        for row in 0..self.m {
            if self.basis[row] < self.n_struct {
                continue;
            }
            let j = (0..self.n_struct)
                .find(|&j| self.a[row * self.ncols + j].abs() > 1e-7)
                .ok_or(Error::RankDeficient {
                    rank: self.m - 1,
                    rows: self.m,
                })?;
            self.pivot(row, j);
        }
        Ok(())
    }

    fn solution(&self, n: usize) -> Vec<f64> {
        let mut x = vec![0.0; n];
        for (row, &b) in self.basis.iter().enumerate() {
            if b < n {
                x[b] += self.rhs[row];
            } else if b < 2 * n {
                x[b - n] -= self.rhs[row];
            }
        }
        x
    }

    /// True when a nonbasic structural column sits at zero reduced cost and
    /// can move by a nonzero step, i.e. a different solution vector attains
    /// the same objective. Degenerate zero-length pivots do not count.
    fn has_alternative_optimum(&self) -> bool {
        (0..self.n_struct).any(|j| {
            if self.basis.contains(&j) {
                return false;
            }
            if self.reduced_cost(j, false).abs() > REDUCED_COST_TOL {
                return false;
            }
            let step = match self.leaving(j) {
                Some(row) => self.rhs[row].max(0.0) / self.a[row * self.ncols + j],
                // A flat unbounded ray moves the solution arbitrarily far.
                None => f64::INFINITY,
            };
            step > REDUCED_COST_TOL
        })
    }
}

/// Exact l1 minimizer via two-phase primal simplex with Bland's rule.
///
/// Small-scale oracle: N is capped at 200. The iteration cap 50 (N + M)
/// backstops Bland's termination guarantee against numerical tie-breaking.
pub fn l1_min_lp(instance: &ProblemInstance) -> Result<LpSolution> {
    let (n, m) = (instance.n(), instance.m());
    if n > 200 {
        return Err(Error::OracleScale {
            oracle: "lp",
            what: format!("requires N <= 200, got N = {n}"),
        });
    }
    let rank = row_rank(&instance.matrix, PIVOT_TOL);
    if rank < m {
        return Err(Error::RankDeficient { rank, rows: m });
    }

    let mut t = Tableau::new(&instance.matrix, &instance.y);
    let mut budget = 50 * (n + m);

    if !t.optimize(true, &mut budget)? {
        // Phase one minimizes a sum of bounded variables; an unbounded
        // column means the tableau lost feasibility numerically.
        return Ok(LpSolution::degenerate(n, LpStatus::Unbounded));
    }
    if t.objective(true) > 1e-8 {
        return Ok(LpSolution::degenerate(n, LpStatus::Infeasible));
    }
    t.expel_artificials()?;
    if !t.optimize(false, &mut budget)? {
        return Ok(LpSolution::degenerate(n, LpStatus::Unbounded));
    }

    let x_star = t.solution(n);
    let objective = t.objective(false);
    let status = if t.has_alternative_optimum() {
        LpStatus::DegenerateTie
    } else {
        LpStatus::Optimal
    };
    debug_assert!(
        feasibility_gap(instance, &x_star) < 1e-8,
        "simplex returned an infeasible point"
    );
    Ok(LpSolution {
        x_star,
        objective,
        status,
    })
}

fn feasibility_gap(instance: &ProblemInstance, x: &[f64]) -> f64 {
    let fx = instance.matrix.mul(x).expect("length checked");
    linf_diff(&fx, &instance.y)
}

/// Solves the square system built from the given columns of F. None when
/// the submatrix is singular at the pivot tolerance.
fn solve_columns(f: &SensingMatrix, y: &[f64], cols: &[usize]) -> Option<Vec<f64>> {
    let m = f.rows();
    let n = f.cols();
    let mut a = vec![0.0; m * m];
    for (k, &j) in cols.iter().enumerate() {
        for r in 0..m {
            a[r * m + k] = f.entries()[r * n + j];
        }
    }
    let mut b = y.to_vec();
    for col in 0..m {
        let mut piv = col;
        for r in col + 1..m {
            if a[r * m + col].abs() > a[piv * m + col].abs() {
                piv = r;
            }
        }
        if a[piv * m + col].abs() < PIVOT_TOL {
            return None;
        }
        if piv != col {
            for k in 0..m {
                a.swap(piv * m + k, col * m + k);
            }
            b.swap(piv, col);
        }
        for r in col + 1..m {
            let factor = a[r * m + col] / a[col * m + col];
            if factor != 0.0 {
                for k in col..m {
                    a[r * m + k] -= factor * a[col * m + k];
                }
                b[r] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; m];
    for col in (0..m).rev() {
        let mut s = b[col];
        for k in col + 1..m {
            s -= a[col * m + k] * x[k];
        }
        x[col] = s / a[col * m + col];
    }
    Some(x)
}

fn enum_candidates(
    instance: &ProblemInstance,
    mut visit: impl FnMut(f64, Vec<f64>),
) {
    let (n, m) = (instance.n(), instance.m());
    for cols in (0..n).combinations(m) {
        let Some(xs) = solve_columns(&instance.matrix, &instance.y, &cols) else {
            continue;
        };
        let mut x = vec![0.0; n];
        for (k, &j) in cols.iter().enumerate() {
            x[j] = xs[k];
        }
        if feasibility_gap(instance, &x) > 1e-8 {
            continue;
        }
        let obj = x.iter().map(|v| v.abs()).sum();
        visit(obj, x);
    }
}

/// Exact l1 minimizer by enumeration of basic solutions: every invertible
/// M-column submatrix yields one candidate, and an optimum of the LP is
/// always among them.
///
/// Brute-force scale: N <= 20 and M <= 12.
pub fn l1_min_enum(instance: &ProblemInstance) -> Result<LpSolution> {
    let (n, m) = (instance.n(), instance.m());
    if n > 20 || m > 12 {
        return Err(Error::OracleScale {
            oracle: "enum",
            what: format!("requires N <= 20 and M <= 12, got N = {n}, M = {m}"),
        });
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    enum_candidates(instance, |obj, x| {
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, x));
        }
    });
    let Some((objective, x_star)) = best else {
        return Ok(LpSolution::degenerate(n, LpStatus::Infeasible));
    };

    let mut tie = false;
    enum_candidates(instance, |obj, x| {
        if obj <= objective + 1e-9 && linf_diff(&x, &x_star) > DISTINCT_SOLUTION_TOL {
            tie = true;
        }
    });

    Ok(LpSolution {
        x_star,
        objective,
        status: if tie {
            LpStatus::DegenerateTie
        } else {
            LpStatus::Optimal
        },
    })
}
