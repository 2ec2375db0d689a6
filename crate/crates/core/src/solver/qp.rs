//! Euclidean projection onto `{x : C x <= d}` by a dual active-set method
//! (Goldfarb-Idnani with identity Hessian).
//!
//! The iteration starts from the unconstrained minimizer `r0` with an empty
//! active set and repeatedly adds the most violated row (lowest index on
//! ties), dropping rows whose multipliers would turn negative. A QR
//! factorization of the active rows is maintained with Givens rotations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dense::dot;
use crate::error::{Error, Result};

const VIOLATION_TOL: f64 = 1e-12;
const ZERO_TOL: f64 = 1e-13;

/// `min 1/2 ||x - anchor||^2` subject to `rows * x <= rhs`.
#[derive(Clone, Debug)]
pub struct HalfspaceQp {
    pub anchor: Vec<f64>,
    pub rows: DMatrix<f64>,
    pub rhs: Vec<f64>,
}

/// The projection together with its multipliers and KKT residuals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpCertificate {
    pub solution: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub max_stationarity_residual: f64,
    pub max_primal_violation: f64,
    pub max_complementarity_residual: f64,
    pub active_set_steps: usize,
}

impl QpCertificate {
    pub fn max_residual(&self) -> f64 {
        self.max_stationarity_residual.max(self.max_primal_violation).max(self.max_complementarity_residual)
    }

    pub fn is_certified(&self, tol: f64) -> bool {
        self.max_residual() <= tol && self.multipliers.iter().all(|&l| l >= -1e-10)
    }
}

impl HalfspaceQp {
    fn validate(&self) -> Result<()> {
        let n = self.anchor.len();
        if n == 0 || self.rows.ncols() != n || self.rows.nrows() != self.rhs.len() {
            return Err(Error::Shape(format!(
                "QP anchor has {n} entries, rows are {}x{}, rhs has {}",
                self.rows.nrows(),
                self.rows.ncols(),
                self.rhs.len()
            )));
        }
        let finite = self.anchor.iter().chain(&self.rhs).chain(self.rows.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("QP has non-finite entries".into()));
        }
        Ok(())
    }

    /// Residuals of the KKT system at `(x, lambda)`.
    pub fn certificate(&self, x: Vec<f64>, lambda: Vec<f64>, steps: usize) -> QpCertificate {
        let n = self.anchor.len();
        let mut grad: Vec<f64> = x.iter().zip(&self.anchor).map(|(a, b)| a - b).collect();
        let mut primal: f64 = 0.0;
        let mut comp: f64 = 0.0;
        for i in 0..self.rhs.len() {
            let row = self.rows.row(i);
            let lhs: f64 = (0..n).map(|j| row[j] * x[j]).sum();
            let slack = lhs - self.rhs[i];
            primal = primal.max(slack);
            comp = comp.max((lambda[i] * slack).abs());
            if lambda[i] != 0.0 {
                for j in 0..n {
                    grad[j] += lambda[i] * row[j];
                }
            }
        }
        QpCertificate {
            max_stationarity_residual: grad.iter().fold(0.0, |a, g| a.max(g.abs())),
            max_primal_violation: primal.max(0.0),
            max_complementarity_residual: comp,
            solution: x,
            multipliers: lambda,
            active_set_steps: steps,
        }
    }
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

/// Rotates columns `i < j` of `m`.
fn rotate_cols(m: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    let n = m.nrows();
    // Column-major storage: each column is a contiguous slice.
    let (head, tail) = m.as_mut_slice().split_at_mut(j * n);
    let (ci, cj) = (&mut head[i * n..(i + 1) * n], &mut tail[..n]);
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a + s * b;
        *y = -s * a + c * b;
    }
}

struct ActiveSet {
    n: usize,
    /// `J = Q` from the QR factorization of the active constraint normals.
    j: DMatrix<f64>,
    /// Upper-triangular `R`, leading `q x q` block in use.
    r: DMatrix<f64>,
    rows: Vec<usize>,
    u: Vec<f64>,
}

impl ActiveSet {
    fn new(n: usize) -> Self {
        ActiveSet { n, j: DMatrix::identity(n, n), r: DMatrix::zeros(n, n), rows: Vec::new(), u: Vec::new() }
    }

    fn q(&self) -> usize {
        self.rows.len()
    }

    /// Returns `(z, r)`: the primal step direction and the change in the
    /// active multipliers for normal `np`.
    fn directions(&self, np: &DVector<f64>) -> (DVector<f64>, Vec<f64>) {
        let q = self.q();
        let d = self.j.tr_mul(np);
        let mut z = DVector::zeros(self.n);
        for k in q..self.n {
            z.axpy(d[k], &self.j.column(k), 1.0);
        }
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut acc = d[i];
            for k in i + 1..q {
                acc -= self.r[(i, k)] * r[k];
            }
            r[i] = acc / self.r[(i, i)];
        }
        (z, r)
    }

    fn add(&mut self, np: &DVector<f64>, row: usize, u: f64) -> bool {
        let q = self.q();
        let mut d = self.j.tr_mul(np);
        for k in (q + 1..self.n).rev() {
            let (c, s, h) = givens(d[k - 1], d[k]);
            if s == 0.0 {
                continue;
            }
            d[k - 1] = h;
            d[k] = 0.0;
            rotate_cols(&mut self.j, k - 1, k, c, s);
        }
        if d[q].abs() <= ZERO_TOL * np.norm().max(1.0) {
            return false;
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.rows.push(row);
        self.u.push(u);
        true
    }

    fn drop(&mut self, k: usize) {
        let q = self.q();
        for col in k..q - 1 {
            for i in 0..q {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        for i in k..q - 1 {
            let (c, s, h) = givens(self.r[(i, i)], self.r[(i + 1, i)]);
            self.r[(i, i)] = h;
            self.r[(i + 1, i)] = 0.0;
            for col in i + 1..q - 1 {
                let (x, y) = (self.r[(i, col)], self.r[(i + 1, col)]);
                self.r[(i, col)] = c * x + s * y;
                self.r[(i + 1, col)] = -s * x + c * y;
            }
            rotate_cols(&mut self.j, i, i + 1, c, s);
        }
        self.rows.remove(k);
        self.u.remove(k);
    }
}

/// Projects `qp.anchor` onto the polyhedron `{x : rows x <= rhs}`.
///
/// Returns the unique projection with multipliers and KKT residuals. The
/// certificate is not checked against any tolerance here; callers decide
/// what they accept via [`QpCertificate::is_certified`].
pub fn project_halfspaces(qp: &HalfspaceQp) -> Result<QpCertificate> {
    qp.validate()?;
    let n = qp.anchor.len();
    let m = qp.rhs.len();
    // Normals of the `n_i . x >= b_i` form.
    let normals: Vec<DVector<f64>> = (0..m).map(|i| -qp.rows.row(i).transpose()).collect();
    let bounds: Vec<f64> = qp.rhs.iter().map(|d| -d).collect();
    let scale: Vec<f64> = normals.iter().map(|v| v.norm().max(1.0)).collect();

    let mut x = DVector::from_column_slice(&qp.anchor);
    let mut active = ActiveSet::new(n);
    let cap = 50 * (m + n) + 100;
    let mut steps = 0usize;

    let slack = |x: &DVector<f64>, i: usize| normals[i].dot(x) - bounds[i];

    loop {
        // Most violated row, lowest index on ties.
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..m {
            if active.rows.contains(&i) {
                continue;
            }
            let v = slack(&x, i) / scale[i];
            if v < -VIOLATION_TOL && pick.is_none_or(|(_, best)| v < best) {
                pick = Some((i, v));
            }
        }
        let Some((p, _)) = pick else { break };
        let np = &normals[p];
        let mut u_p = 0.0;
        loop {
            steps += 1;
            if steps > cap {
                return Err(Error::MaxIterations {
                    solver: "active-set projection",
                    iterations: steps,
                    detail: format!("adding row {p}, active set {:?}", active.rows),
                });
            }
            let (z, r) = active.directions(np);
            let mut t1 = f64::INFINITY;
            let mut k_drop = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > ZERO_TOL {
                    let ratio = active.u[k] / rk;
                    if ratio < t1 {
                        t1 = ratio;
                        k_drop = Some(k);
                    }
                }
            }
            let zn = z.dot(np);
            let s_p = slack(&x, p);
            let t2 = if z.norm() > ZERO_TOL * scale[p] && zn > 0.0 { -s_p / zn } else { f64::INFINITY };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::QpInfeasible { row: p });
            }
            for (uk, rk) in active.u.iter_mut().zip(&r) {
                *uk -= t * rk;
            }
            u_p += t;
            if t2.is_finite() {
                x.axpy(t, &z, 1.0);
            }
            if t2 <= t1 {
                if !active.add(np, p, u_p) {
                    return Err(Error::Numerical(format!("row {p} is dependent on the active set")));
                }
                break;
            }
            let k = k_drop.expect("partial step has a blocking row");
            active.drop(k);
        }
    }

    let mut lambda = vec![0.0; m];
    for (&row, &u) in active.rows.iter().zip(&active.u) {
        lambda[row] = u.max(0.0);
    }
    let base = qp.certificate(x.iter().copied().collect(), lambda, steps);
    Ok(refine(qp, &active.rows, base))
}

/// Re-solves the equality-constrained projection on the active rows and keeps
/// the result if its KKT residuals are no worse.
fn refine(qp: &HalfspaceQp, active: &[usize], base: QpCertificate) -> QpCertificate {
    if active.is_empty() {
        return base;
    }
    let n = qp.anchor.len();
    let q = active.len();
    let at = DMatrix::from_fn(n, q, |j, k| qp.rows[(active[k], j)]);
    let r0 = DVector::from_column_slice(&qp.anchor);
    let target = DVector::from_fn(q, |k, _| dot(qp.rows.row(active[k]).transpose().as_slice(), &qp.anchor) - qp.rhs[active[k]]);
    let qr = at.clone().qr();
    let r = qr.r();
    if (0..q).any(|i| r[(i, i)].abs() < 1e-12) {
        return base;
    }
    let Some(w) = r.transpose().solve_lower_triangular(&target) else { return base };
    let Some(lam) = r.solve_upper_triangular(&w) else { return base };
    if lam.iter().any(|&l| l < -1e-12) {
        return base;
    }
    let x = &r0 - &at * &lam;
    let mut lambda = vec![0.0; qp.rhs.len()];
    for (k, &row) in active.iter().enumerate() {
        lambda[row] = lam[k].max(0.0);
    }
    let refined = qp.certificate(x.iter().copied().collect(), lambda, base.active_set_steps);
    if refined.max_residual() <= base.max_residual() {
        refined
    } else {
        base
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn qp(anchor: &[f64], rows: &[&[f64]], rhs: &[f64]) -> HalfspaceQp {
        let n = anchor.len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        HalfspaceQp { anchor: anchor.to_vec(), rows: DMatrix::from_row_slice(rows.len(), n, &flat), rhs: rhs.to_vec() }
    }

    #[test]
    fn feasible_anchor_is_fixed() {
        let cert = project_halfspaces(&qp(&[0.0, 0.0], &[&[1.0, 1.0]], &[1.0])).unwrap();
        assert_eq!(cert.solution, vec![0.0, 0.0]);
        assert_eq!(cert.multipliers, vec![0.0]);
    }

    #[test]
    fn single_halfspace() {
        let cert = project_halfspaces(&qp(&[0.0, 0.0], &[&[1.0, -1.0]], &[-0.2])).unwrap();
        assert!((cert.solution[0] + 0.1).abs() < 1e-14);
        assert!((cert.solution[1] - 0.1).abs() < 1e-14);
        assert!((cert.multipliers[0] - 0.1).abs() < 1e-14);
        assert!(cert.is_certified(1e-12));
    }

    #[test]
    fn duplicate_rows() {
        let one = project_halfspaces(&qp(&[0.0, 0.0], &[&[1.0, -1.0]], &[-0.2])).unwrap();
        let two = project_halfspaces(&qp(&[0.0, 0.0], &[&[1.0, -1.0], &[1.0, -1.0]], &[-0.2, -0.2])).unwrap();
        for (a, b) in one.solution.iter().zip(&two.solution) {
            assert!((a - b).abs() < 1e-12);
        }
        let total: f64 = two.multipliers.iter().sum();
        assert!((total - 0.1).abs() < 1e-12);
    }

    #[test]
    fn infeasible_input() {
        let problem = qp(&[0.0], &[&[1.0], &[-1.0]], &[-1.0, -1.0]);
        assert!(matches!(project_halfspaces(&problem), Err(Error::QpInfeasible { .. })));
    }

    /// Random instance whose feasible set contains a known point.
    pub(super) fn random_feasible(rng: &mut ChaCha8Rng) -> HalfspaceQp {
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=12);
        let inside: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let rhs = (0..m)
            .map(|i| (0..n).map(|j| rows[(i, j)] * inside[j]).sum::<f64>() + rng.random_range(0.0..0.3))
            .collect();
        let anchor = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        HalfspaceQp { anchor, rows, rhs }
    }

    #[test]
    fn random_instances_are_certified() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let problem = random_feasible(&mut rng);
            let cert = project_halfspaces(&problem).unwrap();
            assert!(cert.is_certified(1e-7), "{cert:?}");
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let problem = random_feasible(&mut rng);
        assert_eq!(project_halfspaces(&problem).unwrap(), project_halfspaces(&problem).unwrap());
    }
}
