//! Two-phase simplex on a dense tableau with Bland's rule.
//!
//! After the tableau reports optimality the basis is re-solved with an LU
//! factorization; if the refined reduced costs disagree with the tableau the
//! tableau is rebuilt from the basis and pivoting resumes.

use nalgebra::{DMatrix, DVector};

use crate::dense::lu_solve;
use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-8;
const MAX_REBUILDS: usize = 5;

/// `maximize c^T x` subject to `A_eq x = b_eq`, `A_ge x >= b_ge` and, when
/// `nonneg` is set, `x >= 0`.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: Vec<f64>,
    pub a_ge: DMatrix<f64>,
    pub b_ge: Vec<f64>,
    pub nonneg: bool,
}

impl LinearProgram {
    /// An LP with no constraints besides (optionally) `x >= 0`.
    pub fn new(objective: Vec<f64>, nonneg: bool) -> Self {
        let n = objective.len();
        LinearProgram {
            objective,
            a_eq: DMatrix::zeros(0, n),
            b_eq: Vec::new(),
            a_ge: DMatrix::zeros(0, n),
            b_ge: Vec::new(),
            nonneg,
        }
    }

    pub fn with_eq(mut self, a: DMatrix<f64>, b: Vec<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_ge(mut self, a: DMatrix<f64>, b: Vec<f64>) -> Self {
        self.a_ge = a;
        self.b_ge = b;
        self
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if n == 0 {
            return Err(Error::Shape("LP has no variables".into()));
        }
        if self.a_eq.ncols() != n || self.a_ge.ncols() != n {
            return Err(Error::Shape("LP constraint matrices disagree with objective length".into()));
        }
        if self.a_eq.nrows() != self.b_eq.len() || self.a_ge.nrows() != self.b_ge.len() {
            return Err(Error::Shape("LP right-hand sides disagree with constraint rows".into()));
        }
        let finite = self.objective.iter().chain(&self.b_eq).chain(&self.b_ge).all(|v| v.is_finite())
            && self.a_eq.iter().chain(self.a_ge.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("LP has non-finite entries".into()));
        }
        Ok(())
    }

    /// Worst violation of the constraints at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        let eq = (&self.a_eq * &xv).iter().zip(&self.b_eq).map(|(l, b)| (l - b).abs()).fold(0.0, f64::max);
        let ge = (&self.a_ge * &xv).iter().zip(&self.b_ge).map(|(l, b)| (b - l).max(0.0)).fold(0.0, f64::max);
        let nn = if self.nonneg { x.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max) } else { 0.0 };
        eq.max(ge).max(nn)
    }
}

/// An optimal primal-dual pair.
///
/// The duals satisfy `objective = b_eq . eq_duals + b_ge . ge_duals`, with
/// `ge_duals <= 0` and `c - A_eq^T y_eq - A_ge^T y_ge <= 0` componentwise
/// (equality for free variables).
#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub eq_duals: Vec<f64>,
    pub ge_duals: Vec<f64>,
    pub pivots: usize,
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// `rows + 1` rows of `cols + 1` entries; the last row holds reduced
    /// costs and the last column the right-hand side.
    t: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * (self.cols + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.cols + 1;
        let inv = 1.0 / self.at(pr, pc);
        for v in &mut self.t[pr * w..(pr + 1) * w] {
            *v *= inv;
        }
        let pivot_row: Vec<f64> = self.t[pr * w..(pr + 1) * w].to_vec();
        for r in 0..=self.rows {
            if r == pr {
                continue;
            }
            let f = self.t[r * w + pc];
            if f != 0.0 {
                for (v, p) in self.t[r * w..(r + 1) * w].iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                self.t[r * w + pc] = 0.0;
            }
        }
        self.basis[pr] = pc;
    }

    /// Fills the reduced-cost row `c_j - c_B^T B^-1 A_j` for `cost`.
    fn price(&mut self, cost: &[f64]) {
        let w = self.cols + 1;
        let obj = self.rows * w;
        self.t[obj..obj + self.cols].copy_from_slice(&cost[..self.cols]);
        self.t[obj + self.cols] = 0.0;
        for r in 0..self.rows {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                for j in 0..=self.cols {
                    self.t[obj + j] -= cb * self.t[r * w + j];
                }
            }
        }
    }

    /// Runs Bland pivots on columns `< allowed` until no reduced cost exceeds
    /// the tolerance. Returns the entering column if the LP is unbounded.
    fn optimize(&mut self, allowed: usize, pivots: &mut usize, cap: usize) -> Result<Option<usize>> {
        loop {
            let entering = (0..allowed).find(|&j| self.at(self.rows, j) > COST_TOL);
            let Some(q) = entering else { return Ok(None) };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, q);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((br, best)) => {
                            let slack = 1e-12 * (1.0 + best.abs());
                            if ratio < best - slack || (ratio <= best + slack && self.basis[r] < self.basis[br]) {
                                Some((r, ratio))
                            } else {
                                Some((br, best))
                            }
                        }
                    };
                }
            }
            let Some((pr, _)) = leave else { return Ok(Some(q)) };
            self.pivot(pr, q);
            *pivots += 1;
            if *pivots > cap {
                return Err(Error::MaxIterations {
                    solver: "simplex",
                    iterations: *pivots,
                    detail: format!("{} rows, {} columns", self.rows, self.cols),
                });
            }
        }
    }

    fn remove_row(&mut self, r: usize) {
        let w = self.cols + 1;
        self.t.drain(r * w..(r + 1) * w);
        self.basis.remove(r);
        self.rows -= 1;
    }
}

/// Standard form `A x = b, x >= 0`, `b >= 0`, built from a [`LinearProgram`].
struct Standard {
    a: DMatrix<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    /// +1 or -1 per original row (eq rows first, then ge rows).
    sign: Vec<f64>,
    n_orig: usize,
    split: bool,
}

impl Standard {
    fn new(lp: &LinearProgram) -> Self {
        let n = lp.n_vars();
        let split = !lp.nonneg;
        let nx = if split { 2 * n } else { n };
        let (m_eq, m_ge) = (lp.b_eq.len(), lp.b_ge.len());
        let m = m_eq + m_ge;
        let cols = nx + m_ge;
        let mut a = DMatrix::zeros(m, cols);
        let mut b = vec![0.0; m];
        let mut sign = vec![1.0; m];
        for i in 0..m {
            let (src, rhs) = if i < m_eq { (lp.a_eq.row(i), lp.b_eq[i]) } else { (lp.a_ge.row(i - m_eq), lp.b_ge[i - m_eq]) };
            let sg = if rhs < 0.0 { -1.0 } else { 1.0 };
            sign[i] = sg;
            b[i] = sg * rhs;
            for j in 0..n {
                a[(i, j)] = sg * src[j];
                if split {
                    a[(i, n + j)] = -sg * src[j];
                }
            }
            if i >= m_eq {
                a[(i, nx + i - m_eq)] = -sg;
            }
        }
        let mut c = vec![0.0; cols];
        for j in 0..n {
            c[j] = lp.objective[j];
            if split {
                c[n + j] = -lp.objective[j];
            }
        }
        Standard { a, b, c, sign, n_orig: n, split }
    }

    fn recover_x(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n_orig;
        (0..n).map(|j| if self.split { z[j] - z[n + j] } else { z[j] }).collect()
    }
}

/// Solves `lp` to optimality.
///
/// Deterministic: the same instance always takes the same pivot sequence.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let std = Standard::new(lp);
    let m = std.b.len();
    let ns = std.c.len();
    let cols = ns + m;
    let w = cols + 1;

    let mut t = vec![0.0; (m + 1) * w];
    for i in 0..m {
        for j in 0..ns {
            t[i * w + j] = std.a[(i, j)];
        }
        t[i * w + ns + i] = 1.0;
        t[i * w + cols] = std.b[i];
    }
    let mut tab = Tableau { rows: m, cols, t, basis: (ns..ns + m).collect() };
    // Original row index of every tableau row, for duals after removals.
    let mut row_of: Vec<usize> = (0..m).collect();
    let cap = 50 * (m + cols) + 1000;
    let mut pivots = 0;

    // Phase 1: maximize -sum(artificials).
    let phase1: Vec<f64> = (0..cols).map(|j| if j >= ns { -1.0 } else { 0.0 }).collect();
    tab.price(&phase1);
    tab.optimize(cols, &mut pivots, cap)?;
    let infeasibility: f64 = (0..tab.rows).filter(|&r| tab.basis[r] >= ns).map(|r| tab.rhs(r)).sum();
    let b_scale = 1.0 + std.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if infeasibility > 1e-9 * b_scale {
        return Err(Error::LpInfeasible { residual: infeasibility });
    }
    let mut r = 0;
    while r < tab.rows {
        if tab.basis[r] >= ns {
            let best = (0..ns)
                .map(|j| (j, tab.at(r, j).abs()))
                .filter(|&(_, v)| v > PIVOT_TOL)
                .fold(None, |acc: Option<(usize, f64)>, (j, v)| match acc {
                    Some((_, bv)) if bv >= v => acc,
                    _ => Some((j, v)),
                });
            match best {
                Some((j, _)) => {
                    tab.pivot(r, j);
                    pivots += 1;
                }
                None => {
                    tab.remove_row(r);
                    row_of.remove(r);
                    continue;
                }
            }
        }
        r += 1;
    }

    // Phase 2 on structural columns only.
    let mut cost = std.c.clone();
    cost.resize(cols, 0.0);
    tab.price(&cost);
    let mut rebuilds = 0;
    loop {
        if let Some(q) = tab.optimize(ns, &mut pivots, cap)? {
            let column = if std.split && q >= std.n_orig && q < 2 * std.n_orig { q - std.n_orig } else { q };
            return Err(Error::LpUnbounded { column });
        }
        let rows = tab.rows;
        let basis_mat = DMatrix::from_fn(rows, rows, |i, k| std.a[(row_of[i], tab.basis[k])]);
        let rhs = DVector::from_fn(rows, |i, _| std.b[row_of[i]]);
        let x_b = lu_solve(basis_mat.clone(), &rhs, "simplex basis")?;
        let c_b = DVector::from_fn(rows, |k, _| std.c[tab.basis[k]]);
        let y = lu_solve(basis_mat.transpose(), &c_b, "simplex duals")?;
        let worst_cost = (0..ns)
            .map(|j| std.c[j] - (0..rows).map(|i| y[i] * std.a[(row_of[i], j)]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        let min_x = x_b.iter().copied().fold(f64::INFINITY, f64::min);
        if min_x < -1e-7 {
            return Err(Error::Numerical(format!("refined basic solution has entry {min_x:e}")));
        }
        if worst_cost <= COST_TOL || rebuilds == MAX_REBUILDS {
            if worst_cost > 1e-6 {
                return Err(Error::Numerical(format!("reduced cost {worst_cost:e} after {rebuilds} rebuilds")));
            }
            let mut z = vec![0.0; ns];
            for (k, &j) in tab.basis.iter().enumerate() {
                z[j] = x_b[k].max(0.0);
            }
            let x = std.recover_x(&z);
            let objective: f64 = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
            let mut duals = vec![0.0; m];
            for (i, &orig) in row_of.iter().enumerate() {
                duals[orig] = std.sign[orig] * y[i];
            }
            let ge_duals = duals.split_off(lp.b_eq.len());
            let violation = lp.max_violation(&x);
            if violation > FEAS_TOL * b_scale {
                return Err(Error::Numerical(format!("LP solution violates constraints by {violation:e}")));
            }
            return Ok(LpSolution { x, objective, eq_duals: duals, ge_duals, pivots });
        }
        // The tableau drifted; rebuild it from the basis and keep pivoting.
        rebuilds += 1;
        log::debug!("simplex: rebuilding tableau (reduced cost {worst_cost:e})");
        let basis_mat = DMatrix::from_fn(rows, rows, |i, k| std.a[(row_of[i], tab.basis[k])]);
        let lu = basis_mat.lu();
        let mut full = DMatrix::zeros(rows, ns + 1);
        for i in 0..rows {
            for j in 0..ns {
                full[(i, j)] = std.a[(row_of[i], j)];
            }
            full[(i, ns)] = std.b[row_of[i]];
        }
        let solved = lu.solve(&full).ok_or(Error::Singular("simplex basis"))?;
        for i in 0..rows {
            for j in 0..ns {
                tab.t[i * w + j] = solved[(i, j)];
            }
            for j in ns..cols {
                tab.t[i * w + j] = 0.0;
            }
            tab.t[i * w + cols] = solved[(i, ns)].max(0.0);
        }
        tab.price(&cost);
    }
}
