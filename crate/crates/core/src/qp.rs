//! Dense strictly convex QP solver.
//!
//! Solves
//!
//! ```text
//!     minimize    ½ xᵀ H x + fᵀ x
//!     subject to  Aeq x  = beq
//!                 Aineq x <= bineq
//! ```
//!
//! Equalities are eliminated through an orthonormal nullspace basis; the
//! reduced problem is solved with the Goldfarb–Idnani dual active-set method,
//! followed by a polishing solve on the final active set. Multipliers follow
//! the convention `H x + f + Aeqᵀ ν + Aineqᵀ μ = 0`, `μ ≥ 0`.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{FesError, Result};
use crate::linalg::{nullspace, Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpInstance {
    pub h: Matrix,
    pub f: Vector,
    pub a_eq: Matrix,
    pub b_eq: Vector,
    pub a_ineq: Matrix,
    pub b_ineq: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vector,
    pub duals_eq: Vector,
    pub duals_ineq: Vector,
    pub active_set: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub max_iter: usize,
    /// Relative feasibility tolerance on inequality rows.
    pub feas_tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions { max_iter: 50_000, feas_tol: 1e-12 }
    }
}

impl QpInstance {
    /// Unconstrained instance; add rows with [`with_eq`](Self::with_eq) and
    /// [`with_ineq`](Self::with_ineq).
    pub fn new(h: Matrix, f: Vector) -> Self {
        let n = f.len();
        QpInstance {
            h,
            f,
            a_eq: Matrix::zeros(0, n),
            b_eq: Vector::zeros(0),
            a_ineq: Matrix::zeros(0, n),
            b_ineq: Vector::zeros(0),
        }
    }

    pub fn with_eq(mut self, a: Matrix, b: Vector) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_ineq(mut self, a: Matrix, b: Vector) -> Self {
        self.a_ineq = a;
        self.b_ineq = b;
        self
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.f.len();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(FesError::Dimension(format!("H is {}x{}, expected {n}x{n}", self.h.nrows(), self.h.ncols())));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err(FesError::Dimension("equality block".into()));
        }
        if self.a_ineq.ncols() != n || self.a_ineq.nrows() != self.b_ineq.len() {
            return Err(FesError::Dimension("inequality block".into()));
        }
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-12 * (1.0 + self.h.amax()) {
            return Err(FesError::InvalidParameter(format!("H not symmetric (deviation {asym:.3e})")));
        }
        let finite = self.h.iter().chain(self.f.iter()).chain(self.a_eq.iter()).chain(self.b_eq.iter())
            .chain(self.a_ineq.iter()).chain(self.b_ineq.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(FesError::NonFinite("QP data".into()));
        }
        Ok(())
    }

    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }

    /// Infinity-norm KKT residual: stationarity, primal feasibility, dual
    /// feasibility and complementarity.
    pub fn kkt_residual(&self, x: &Vector, nu: &Vector, mu: &Vector) -> f64 {
        let stat = &self.h * x + &self.f + self.a_eq.transpose() * nu + self.a_ineq.transpose() * mu;
        let mut r = stat.amax();
        if !self.b_eq.is_empty() {
            r = r.max((&self.a_eq * x - &self.b_eq).amax());
        }
        let slack = &self.a_ineq * x - &self.b_ineq;
        for i in 0..slack.len() {
            r = r.max(slack[i].max(0.0));
            r = r.max((-mu[i]).max(0.0));
            r = r.max((mu[i] * slack[i]).abs());
        }
        r
    }
}

pub fn solve_qp(qp: &QpInstance) -> Result<QpSolution> {
    solve_qp_with(qp, &QpOptions::default())
}

pub fn solve_qp_with(qp: &QpInstance, opts: &QpOptions) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.dim();
    let m = qp.b_ineq.len();

    // equality elimination: x = xp + Z y
    let (z, _rank) = nullspace(&qp.a_eq, 1e-12);
    let xp = if !qp.b_eq.is_empty() {
        let svd = qp.a_eq.clone().svd(true, true);
        let xp = svd.solve(&qp.b_eq, 1e-12 * svd.singular_values.max()).map_err(|e| FesError::Dimension(e.into()))?;
        let res = (&qp.a_eq * &xp - &qp.b_eq).amax();
        if res > 1e-9 * (1.0 + qp.b_eq.amax()) {
            return Err(FesError::QpInfeasible { certificate_residual: res });
        }
        xp
    } else {
        Vector::zeros(n)
    };

    let r = z.ncols();
    let hr = z.transpose() * &qp.h * &z;
    let hr = (&hr + hr.transpose()) * 0.5;
    let fr = z.transpose() * (&qp.h * &xp + &qp.f);
    let c = &qp.a_ineq * &z;
    let d = &qp.b_ineq - &qp.a_ineq * &xp;

    let (y, active, mu_active, iterations) = if r == 0 {
        for j in 0..m {
            if d[j] < -1e-9 * (1.0 + qp.b_ineq[j].abs()) {
                return Err(FesError::QpInfeasible { certificate_residual: -d[j] });
            }
        }
        (Vector::zeros(0), Vec::new(), Vec::new(), 0)
    } else {
        goldfarb_idnani(&hr, &fr, &c, &d, opts)?
    };

    let x = &xp + &z * &y;
    let mut mu = Vector::zeros(m);
    for (k, &j) in active.iter().enumerate() {
        mu[j] = mu_active[k].max(0.0);
    }
    let nu = if !qp.b_eq.is_empty() {
        let rhs = -(&qp.h * &x + &qp.f + qp.a_ineq.transpose() * &mu);
        let at = qp.a_eq.transpose();
        let svd = at.svd(true, true);
        svd.solve(&rhs, 1e-12 * svd.singular_values.max()).map_err(|e| FesError::Dimension(e.into()))?
    } else {
        Vector::zeros(0)
    };
    Ok(QpSolution { x, duals_eq: nu, duals_ineq: mu, active_set: active, iterations })
}

type GiResult = (Vector, Vec<usize>, Vec<f64>, usize);

/// Dual active-set iteration on `min ½yᵀHy + fᵀy  s.t.  C y ≤ d` with H ≻ 0.
fn goldfarb_idnani(h: &Matrix, f: &Vector, c: &Matrix, d: &Vector, opts: &QpOptions) -> Result<GiResult> {
    let m = c.nrows();
    let chol = match Cholesky::new(h.clone()) {
        Some(ch) => ch,
        None => {
            let piv = crate::linalg::ldl_pivots(h);
            return Err(FesError::QpNotStrictlyConvex { pivot: *piv.last().unwrap_or(&0.0) });
        }
    };
    let mut y = -chol.solve(f);
    if y.iter().any(|v| !v.is_finite()) {
        return Err(FesError::NonFinite("QP unconstrained minimizer (ill-conditioned Hessian)".into()));
    }
    let mut active: Vec<usize> = Vec::new();
    let mut mu: Vec<f64> = Vec::new();
    let row_norm: Vec<f64> = (0..m).map(|j| c.row(j).norm()).collect();
    let mut iter = 0usize;

    for j in 0..m {
        if row_norm[j] == 0.0 && d[j] < -opts.feas_tol.max(1e-9) * (1.0 + d[j].abs()) {
            return Err(FesError::QpInfeasible { certificate_residual: 0.0 });
        }
    }

    loop {
        // most violated constraint, scaled by row norm
        let mut p = None;
        let mut worst = 0.0;
        for j in 0..m {
            if row_norm[j] == 0.0 || active.contains(&j) {
                continue;
            }
            let s = c.row(j).dot(&y.transpose()) - d[j];
            let tol = opts.feas_tol * (1.0 + d[j].abs() + row_norm[j] * y.amax());
            if s > tol {
                let v = s / row_norm[j];
                if v > worst {
                    worst = v;
                    p = Some(j);
                }
            }
        }
        let Some(p) = p else { break };
        let cp: Vector = c.row(p).transpose();
        let ref_curv = cp.dot(&chol.solve(&cp));
        let mut tp = 0.0;

        loop {
            iter += 1;
            if iter > opts.max_iter {
                return Err(FesError::QpMaxIterations(opts.max_iter));
            }
            let (dz, dmu) = kkt_direction(h, c, &active, &cp)?;
            let sp = cp.dot(&y) - d[p];
            if !sp.is_finite() || dz.iter().chain(dmu.iter()).any(|v| !v.is_finite()) {
                return Err(FesError::NonFinite("QP active-set step (ill-conditioned Hessian)".into()));
            }
            let curv = -cp.dot(&dz);
            let t2 = if curv > 1e-12 * ref_curv { sp / curv } else { f64::INFINITY };
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (k, &dm) in dmu.iter().enumerate() {
                if dm < 0.0 {
                    let t = mu[k] / -dm;
                    if t < t1 {
                        t1 = t;
                        drop = Some(k);
                    }
                }
            }
            if t1.is_infinite() && t2.is_infinite() {
                // cp + N dmu = 0 with dmu ≥ 0 gives a Farkas certificate
                let mut comb = cp.clone();
                for (k, &j) in active.iter().enumerate() {
                    comb += c.row(j).transpose() * dmu[k];
                }
                return Err(FesError::QpInfeasible { certificate_residual: comb.amax() });
            }
            if t2 <= t1 {
                y += &dz * t2;
                for (k, v) in mu.iter_mut().enumerate() {
                    *v += t2 * dmu[k];
                }
                tp += t2;
                active.push(p);
                mu.push(tp);
                break;
            }
            let Some(k) = drop else {
                return Err(FesError::NonFinite("QP step length".into()));
            };
            y += &dz * t1;
            for (i, v) in mu.iter_mut().enumerate() {
                *v += t1 * dmu[i];
            }
            tp += t1;
            active.remove(k);
            mu.remove(k);
        }
    }

    polish(h, f, c, d, &mut y, &active, &mut mu)?;
    Ok((y, active, mu, iter))
}

/// Solves `[H N; Nᵀ 0][dz; dmu] = [−cp; 0]`.
fn kkt_direction(h: &Matrix, c: &Matrix, active: &[usize], cp: &Vector) -> Result<(Vector, Vec<f64>)> {
    let n = h.nrows();
    let k = active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    for (i, &j) in active.iter().enumerate() {
        for col in 0..n {
            kkt[(col, n + i)] = c[(j, col)];
            kkt[(n + i, col)] = c[(j, col)];
        }
    }
    let mut rhs = Vector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-cp));
    let sol = kkt.lu().solve(&rhs).ok_or(FesError::QpNotStrictlyConvex { pivot: 0.0 })?;
    Ok((sol.rows(0, n).into_owned(), sol.rows(n, k).iter().copied().collect()))
}

/// Re-solves the equality-constrained problem on the final active set.
fn polish(h: &Matrix, f: &Vector, c: &Matrix, d: &Vector, y: &mut Vector, active: &[usize], mu: &mut [f64]) -> Result<()> {
    let n = h.nrows();
    let k = active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    let mut rhs = Vector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-f));
    for (i, &j) in active.iter().enumerate() {
        for col in 0..n {
            kkt[(col, n + i)] = c[(j, col)];
            kkt[(n + i, col)] = c[(j, col)];
        }
        rhs[n + i] = d[j];
    }
    if let Some(sol) = kkt.lu().solve(&rhs) {
        if sol.iter().all(|v| v.is_finite()) {
            y.copy_from(&sol.rows(0, n));
            for i in 0..k {
                mu[i] = sol[n + i].max(0.0);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    #[test]
    fn lower_bound_active() {
        // min ½u² s.t. u ≥ 1  ->  −u ≤ −1
        let qp = QpInstance::new(Matrix::identity(1, 1), v(&[0.0]))
            .with_ineq(Matrix::from_row_slice(1, 1, &[-1.0]), v(&[-1.0]));
        let s = solve_qp(&qp).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12);
        assert!((s.duals_ineq[0] - 1.0).abs() < 1e-12);
        assert!(qp.kkt_residual(&s.x, &s.duals_eq, &s.duals_ineq) < 1e-12);
    }

    #[test]
    fn equality_constrained() {
        let qp = QpInstance::new(Matrix::identity(2, 2), v(&[0.0, 0.0]))
            .with_eq(Matrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[1.0]));
        let s = solve_qp(&qp).unwrap();
        assert!((&s.x - v(&[0.5, 0.5])).amax() < 1e-12);
        assert!((s.duals_eq[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn infeasible_detected() {
        // x ≤ 0 and x ≥ 1
        let qp = QpInstance::new(Matrix::identity(1, 1), v(&[0.0]))
            .with_ineq(Matrix::from_row_slice(2, 1, &[1.0, -1.0]), v(&[0.0, -1.0]));
        assert!(matches!(solve_qp(&qp), Err(FesError::QpInfeasible { .. })));
    }

    #[test]
    fn nonconvex_rejected() {
        let qp = QpInstance::new(Matrix::from_row_slice(1, 1, &[-1.0]), v(&[0.0]));
        assert!(matches!(solve_qp(&qp), Err(FesError::QpNotStrictlyConvex { .. })));
    }

    #[test]
    fn semidefinite_h_with_positive_reduced_hessian() {
        // H = diag(1, 0) but the equality ties x2 to x1
        let h = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let qp = QpInstance::new(h, v(&[-1.0, 0.0]))
            .with_eq(Matrix::from_row_slice(1, 2, &[1.0, -1.0]), v(&[0.0]))
            .with_ineq(Matrix::from_row_slice(1, 2, &[0.0, 1.0]), v(&[0.5]));
        let s = solve_qp(&qp).unwrap();
        assert!((&s.x - v(&[0.5, 0.5])).amax() < 1e-12);
        assert!(qp.kkt_residual(&s.x, &s.duals_eq, &s.duals_ineq) < 1e-12);
    }

    #[test]
    fn rank_deficient_equalities() {
        let qp = QpInstance::new(Matrix::identity(2, 2), v(&[0.0, 0.0]))
            .with_eq(Matrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]), v(&[1.0, 2.0]));
        let s = solve_qp(&qp).unwrap();
        assert!((&s.x - v(&[0.5, 0.5])).amax() < 1e-12);
        assert!(qp.kkt_residual(&s.x, &s.duals_eq, &s.duals_ineq) < 1e-12);
    }

    #[test]
    fn duplicated_rows_handled() {
        let a = Matrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, -1.0, 0.0]);
        let qp = QpInstance::new(Matrix::identity(2, 2), v(&[-2.0, -2.0])).with_ineq(a, v(&[1.0, 1.0, 0.0]));
        let s = solve_qp(&qp).unwrap();
        assert!((&s.x - v(&[0.5, 0.5])).amax() < 1e-12);
        assert!(qp.kkt_residual(&s.x, &s.duals_eq, &s.duals_ineq) < 1e-10);
    }

    #[test]
    fn tiny_hessian_errors_instead_of_panicking() {
        let qp = QpInstance::new(Matrix::identity(2, 2) * 1e-300, Vector::from_row_slice(&[-1e10, -1e10]))
            .with_ineq(Matrix::from_row_slice(1, 2, &[1.0, 1.0]), Vector::from_element(1, 1.0));
        assert!(solve_qp(&qp).is_err());
    }
}
