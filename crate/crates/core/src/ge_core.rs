//! Structured generalized equations `0 ∈ G(z,s) + 𝒜(z)`, their solution
//! oracles, and numerical regularity checks.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{FesError, Result};
use crate::linalg::{concat, fd_jacobian, ldl_pivots, max_rel_deviation, numerical_rank, Matrix, Vector};
use crate::operators::{ConvexSet, SetValuedOp};

pub type PairMap = Arc<dyn Fn(&Vector, &Vector) -> Vector + Send + Sync>;
pub type PairMatrixMap = Arc<dyn Fn(&Vector, &Vector) -> Matrix + Send + Sync>;
pub type VectorMap = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;

pub const PIVOT_TOL: f64 = 1e-10;
pub const RANK_TOL: f64 = 1e-8;

#[derive(Clone)]
pub struct GeProblem {
    pub dim_z: usize,
    pub dim_s: usize,
    pub g_map: PairMap,
    pub a_op: SetValuedOp,
    pub q_map: VectorMap,
    /// Lipschitz bound of `q`.
    pub l_q: f64,
    pub jacobian_z: Option<PairMatrixMap>,
    pub jacobian_s: Option<PairMatrixMap>,
}

impl fmt::Debug for GeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeProblem").field("dim_z", &self.dim_z).field("dim_s", &self.dim_s).field("a_op", &self.a_op).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianCheck {
    pub max_dev_z: f64,
    pub max_dev_s: f64,
    pub points: usize,
}

impl GeProblem {
    /// Infinity norm of the natural-map residual at `(z, s)`.
    pub fn residual(&self, z: &Vector, s: &Vector) -> f64 {
        self.a_op.natural_residual(z, &(self.g_map)(z, s)).amax()
    }

    /// Compares analytic Jacobians with central differences at the given points.
    pub fn check_jacobians(&self, points: &[(Vector, Vector)]) -> JacobianCheck {
        let mut out = JacobianCheck { max_dev_z: 0.0, max_dev_s: 0.0, points: points.len() };
        for (z, s) in points {
            if let Some(jz) = &self.jacobian_z {
                let fd = fd_jacobian(|zz| (self.g_map)(zz, s), z, 1e-6);
                out.max_dev_z = out.max_dev_z.max(max_rel_deviation(&jz(z, s), &fd));
            }
            if let Some(js) = &self.jacobian_s {
                let fd = fd_jacobian(|ss| (self.g_map)(z, ss), s, 1e-6);
                out.max_dev_s = out.max_dev_s.max(max_rel_deviation(&js(z, s), &fd));
            }
        }
        out
    }
}

/// Model-based fixed-point map `𝕋(z, w)` whose fixed points are `S(w)`.
#[derive(Clone)]
pub struct SolutionOracle {
    pub condensed_map: PairMap,
    pub tol: f64,
    pub max_iter: usize,
}

impl fmt::Debug for SolutionOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SolutionOracle").field("tol", &self.tol).field("max_iter", &self.max_iter).finish()
    }
}

/// Iterates `z ← 𝕋(z, w)` from `z0` until the fixed-point residual is below
/// `tol`. The branch reached is the one selected by the start point.
pub fn solve_oracle(oracle: &SolutionOracle, w: &Vector, z0: &Vector) -> Result<Vector> {
    if !z0.iter().all(|v| v.is_finite()) {
        return Err(FesError::NonFinite("oracle start point".into()));
    }
    if !(oracle.tol > 0.0) {
        return Err(FesError::InvalidParameter("oracle tolerance must be positive".into()));
    }
    let mut z = z0.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..=oracle.max_iter {
        let next = (oracle.condensed_map)(&z, w);
        residual = (&next - &z).norm();
        if !residual.is_finite() {
            break;
        }
        if residual <= oracle.tol {
            return Ok(z);
        }
        z = next;
    }
    Err(FesError::NonConvergence { iterations: oracle.max_iter, residual })
}

/// Nonsmooth term ϕ of the composite cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonsmoothTerm {
    Zero,
    /// `weight · Σ_j max(0, lower_j − ξ_{i_j}, ξ_{i_j} − upper_j)`.
    Hinge { indices: Vec<usize>, lower: Vec<f64>, upper: Vec<f64>, weight: f64 },
}

impl NonsmoothTerm {
    pub fn value(&self, xi: &Vector) -> f64 {
        match self {
            NonsmoothTerm::Zero => 0.0,
            NonsmoothTerm::Hinge { indices, lower, upper, weight } => {
                weight * indices.iter().enumerate().map(|(j, &i)| (lower[j] - xi[i]).max(xi[i] - upper[j]).max(0.0)).sum::<f64>()
            }
        }
    }

    /// Total violation `Σ max(0, lower − ξ, ξ − upper)` without the weight.
    pub fn violation(&self, xi: &Vector) -> f64 {
        match self {
            NonsmoothTerm::Zero => 0.0,
            NonsmoothTerm::Hinge { indices, lower, upper, .. } => {
                indices.iter().enumerate().map(|(j, &i)| (lower[j] - xi[i]).max(xi[i] - upper[j]).max(0.0)).sum()
            }
        }
    }

    /// Proximal map of `t·ϕ`.
    pub fn prox(&self, v: &Vector, t: f64) -> Vector {
        match self {
            NonsmoothTerm::Zero => v.clone(),
            NonsmoothTerm::Hinge { indices, lower, upper, weight } => {
                let mut out = v.clone();
                let s = t * weight;
                for (j, &i) in indices.iter().enumerate() {
                    let (l, u, x) = (lower[j], upper[j], v[i]);
                    out[i] = if x > u + s {
                        x - s
                    } else if x >= u {
                        u
                    } else if x >= l {
                        x
                    } else if x >= l - s {
                        l
                    } else {
                        x + s
                    };
                }
                out
            }
        }
    }
}

pub type CostFn = Arc<dyn Fn(&Vector, &Vector) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&Vector, &Vector) -> (Vector, Vector) + Send + Sync>;
pub type CurvatureFn = Arc<dyn Fn(&Vector, &Vector, &Vector) -> Matrix + Send + Sync>;

/// `min φ(ξ,u) + ϕ(ξ)  s.t.  ξ = h(u,w), u ∈ 𝒰`, with primal-dual point
/// `z = (ξ, u, λ)` and Lagrangian `φ + ϕ + λᵀ(h − ξ)`.
#[derive(Clone)]
pub struct KktNlpProblem {
    pub n_y: usize,
    pub n_u: usize,
    pub phi: CostFn,
    pub phi_grad: GradFn,
    /// Hessian of φ over `(ξ, u)`.
    pub phi_hess: PairMatrixMap,
    pub varphi: NonsmoothTerm,
    pub u_set: ConvexSet,
    /// Steady-state map h(u, w).
    pub h: PairMap,
    pub h_sensitivity: PairMatrixMap,
    /// ∇²ᵤ(λᵀh)(u, w, λ); `None` means zero curvature.
    pub h_curvature: Option<CurvatureFn>,
    /// Disturbance estimate `ŵ(s, u)` from measured outputs and the applied
    /// input, used when the controller evaluates the sensitivity.
    pub w_estimate: PairMap,
}

impl fmt::Debug for KktNlpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KktNlpProblem").field("n_y", &self.n_y).field("n_u", &self.n_u).field("varphi", &self.varphi).finish()
    }
}

impl KktNlpProblem {
    pub fn dim_z(&self) -> usize {
        2 * self.n_y + self.n_u
    }

    pub fn split(&self, z: &Vector) -> (Vector, Vector, Vector) {
        (z.rows(0, self.n_y).into_owned(), z.rows(self.n_y, self.n_u).into_owned(), z.rows(self.n_y + self.n_u, self.n_y).into_owned())
    }

    pub fn join(&self, xi: &Vector, u: &Vector, lam: &Vector) -> Vector {
        concat(&[xi, u, lam])
    }

    /// KKT residual with the steady-state output `s` standing in for `h(u,w)`.
    pub fn kkt_residual_with_output(&self, z: &Vector, s: &Vector, sens: &Matrix) -> f64 {
        let (xi, u, lam) = self.split(z);
        let (gx, gu) = (self.phi_grad)(&xi, &u);
        let r1 = &xi - self.varphi.prox(&(&xi - (&gx - &lam)), 1.0);
        let r2 = &u - self.u_set.project(&(&u - (&gu + sens.transpose() * &lam)));
        let r3 = s - &xi;
        r1.amax().max(r2.amax()).max(r3.amax())
    }

    pub fn kkt_residual(&self, z: &Vector, w: &Vector) -> f64 {
        let (_, u, _) = self.split(z);
        let s = (self.h)(&u, w);
        self.kkt_residual_with_output(z, &s, &(self.h_sensitivity)(&u, w))
    }

    /// Hessian of the smooth Lagrangian over `(ξ, u)`.
    pub fn lagrangian_hessian(&self, z: &Vector, w: &Vector) -> Matrix {
        let (xi, u, lam) = self.split(z);
        let mut hess = (self.phi_hess)(&xi, &u);
        if let Some(curv) = &self.h_curvature {
            let c = curv(&u, w, &lam);
            let mut blk = hess.view_mut((self.n_y, self.n_y), (self.n_u, self.n_u));
            blk += c;
        }
        hess
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsoscResult {
    pub positive_definite: bool,
    pub min_pivot: f64,
    pub pivots: Vec<f64>,
}

/// Factorizes `Zᵀ ∇²L Z` with `Z = [∇ᵤh; I]` and reports whether every
/// pivot exceeds [`PIVOT_TOL`].
pub fn ssosc_check(nlp: &KktNlpProblem, z_bar: &Vector, w: &Vector) -> Result<SsoscResult> {
    let res = nlp.kkt_residual(z_bar, w);
    if !(res <= 1e-6) {
        return Err(FesError::NotKkt(res));
    }
    let (_, u, _) = nlp.split(z_bar);
    let sens = (nlp.h_sensitivity)(&u, w);
    let mut basis = Matrix::zeros(nlp.n_y + nlp.n_u, nlp.n_u);
    basis.view_mut((0, 0), (nlp.n_y, nlp.n_u)).copy_from(&sens);
    basis.view_mut((nlp.n_y, 0), (nlp.n_u, nlp.n_u)).fill_with_identity();
    let reduced = basis.transpose() * nlp.lagrangian_hessian(z_bar, w) * &basis;
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let pivots = ldl_pivots(&reduced);
    let complete = pivots.len() == nlp.n_u;
    let min_pivot = pivots.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SsoscResult { positive_definite: complete && min_pivot > PIVOT_TOL, min_pivot, pivots })
}

/// Agents `i = 1..N` with pseudo-gradient blocks `F_i(u, s)`, local sets and
/// a shared affine coupling `A u ≤ b`.
#[derive(Clone)]
pub struct GameProblem {
    pub local_dims: Vec<usize>,
    /// Dimension of the measured output `s`.
    pub dim_s: usize,
    pub partial_gradients: Vec<PairMap>,
    pub local_sets: Vec<ConvexSet>,
    pub coupling_a: Matrix,
    pub coupling_b: Vector,
    pub mu_tilde: f64,
    pub ell_tilde: f64,
    pub ell: f64,
    /// ∇ᵤF(u, s) and ∇ₛF(u, s) when known.
    pub jacobian_u: Option<PairMatrixMap>,
    pub jacobian_s: Option<PairMatrixMap>,
}

impl fmt::Debug for GameProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GameProblem")
            .field("local_dims", &self.local_dims)
            .field("coupling_a", &self.coupling_a)
            .field("coupling_b", &self.coupling_b)
            .field("mu_tilde", &self.mu_tilde)
            .field("ell_tilde", &self.ell_tilde)
            .finish()
    }
}

impl GameProblem {
    pub fn n_agents(&self) -> usize {
        self.local_dims.len()
    }

    pub fn n_u(&self) -> usize {
        self.local_dims.iter().sum()
    }

    pub fn n_coupling(&self) -> usize {
        self.coupling_b.len()
    }

    pub fn offset(&self, i: usize) -> usize {
        self.local_dims[..i].iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_agents();
        if n == 0 || self.partial_gradients.len() != n || self.local_sets.len() != n {
            return Err(FesError::Dimension("game agent lists".into()));
        }
        if self.local_sets.iter().zip(&self.local_dims).any(|(s, &d)| s.dim() != d) {
            return Err(FesError::Dimension("local set dimensions".into()));
        }
        if self.coupling_a.ncols() != self.n_u() || self.coupling_a.nrows() != self.coupling_b.len() {
            return Err(FesError::Dimension("coupling constraint".into()));
        }
        if !(self.mu_tilde > 0.0) || self.mu_tilde > self.ell_tilde {
            return Err(FesError::InvalidParameter(format!(
                "need 0 < mu_tilde ≤ ell_tilde (got {} and {})",
                self.mu_tilde, self.ell_tilde
            )));
        }
        Ok(())
    }

    /// Stacked pseudo-gradient `F(u, s)` in agent order.
    pub fn pseudo_gradient(&self, u: &Vector, s: &Vector) -> Vector {
        let parts: Vec<Vector> = self.partial_gradients.iter().map(|f| f(u, s)).collect();
        let refs: Vec<&Vector> = parts.iter().collect();
        concat(&refs)
    }

    pub fn local_set(&self) -> ConvexSet {
        ConvexSet::Product(self.local_sets.clone())
    }

    /// Stacked constraint rows `[A; B_1; …; B_N]` (local rows embedded).
    pub fn stacked_constraints(&self) -> (Matrix, Vector) {
        let n_u = self.n_u();
        let (local_a, local_b) = self.local_set().as_rows();
        let m = self.n_coupling();
        let rows = m + local_a.nrows();
        let mut a = Matrix::zeros(rows, n_u);
        let mut b = Vector::zeros(rows);
        a.view_mut((0, 0), (m, n_u)).copy_from(&self.coupling_a);
        b.rows_mut(0, m).copy_from(&self.coupling_b);
        a.view_mut((m, 0), (local_a.nrows(), n_u)).copy_from(&local_a);
        b.rows_mut(m, local_b.len()).copy_from(&local_b);
        (a, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LicqResult {
    pub independent: bool,
    pub active: Vec<usize>,
    pub rank: usize,
}

/// Rank test on the active rows of `[A; B_1; …; B_N]` at `u_bar`.
pub fn licq_check(game: &GameProblem, u_bar: &Vector, active_tol: f64) -> Result<LicqResult> {
    let (a, b) = game.stacked_constraints();
    let slack = &a * u_bar - &b;
    let worst = slack.iter().fold(0.0f64, |m, v| m.max(*v));
    if worst > active_tol {
        return Err(FesError::Infeasible(worst));
    }
    let active: Vec<usize> = (0..slack.len()).filter(|&i| slack[i] >= -active_tol).collect();
    let block = Matrix::from_fn(active.len(), a.ncols(), |r, c| a[(active[r], c)]);
    let rank = numerical_rank(&block, RANK_TOL);
    Ok(LicqResult { independent: rank == active.len(), active, rank })
}

/// Casts the game's KKT system as a GE with `z = (u, λ)`.
pub fn assemble_game_ge(game: &GameProblem) -> Result<GeProblem> {
    game.validate()?;
    let n_u = game.n_u();
    let m = game.n_coupling();
    let a = game.coupling_a.clone();
    let mut skew = Matrix::zeros(n_u + m, n_u + m);
    skew.view_mut((0, n_u), (n_u, m)).copy_from(&a.transpose());
    skew.view_mut((n_u, 0), (m, n_u)).copy_from(&(-&a));
    let mut cones = game.local_sets.clone();
    cones.push(ConvexSet::NonnegOrthant(m));
    let g_game = game.clone();
    let b = game.coupling_b.clone();
    let g_map: PairMap = Arc::new(move |z: &Vector, s: &Vector| {
        let u = z.rows(0, n_u).into_owned();
        concat(&[&g_game.pseudo_gradient(&u, s), &b])
    });
    let jacobian_z = game.jacobian_u.clone().map(|ju| -> PairMatrixMap {
        Arc::new(move |z: &Vector, s: &Vector| {
            let u = z.rows(0, n_u).into_owned();
            let mut j = Matrix::zeros(n_u + m, n_u + m);
            j.view_mut((0, 0), (n_u, n_u)).copy_from(&ju(&u, s));
            j
        })
    });
    let jacobian_s = game.jacobian_s.clone().map(|js| -> PairMatrixMap {
        Arc::new(move |z: &Vector, s: &Vector| {
            let u = z.rows(0, n_u).into_owned();
            let blk = js(&u, s);
            let mut j = Matrix::zeros(n_u + m, s.len());
            j.view_mut((0, 0), (n_u, s.len())).copy_from(&blk);
            j
        })
    });
    Ok(GeProblem {
        dim_z: n_u + m,
        dim_s: game.dim_s,
        g_map,
        a_op: SetValuedOp::SkewPlusCones { skew, cones: ConvexSet::Product(cones) },
        q_map: Arc::new(move |z: &Vector| z.rows(0, n_u).into_owned()),
        l_q: 1.0,
        jacobian_z,
        jacobian_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::BoxSet;

    fn decoupled_game() -> GameProblem {
        let f1: PairMap = Arc::new(|u: &Vector, _s: &Vector| Vector::from_element(1, 2.0 * (u[0] - 1.0)));
        let f2: PairMap = Arc::new(|u: &Vector, _s: &Vector| Vector::from_element(1, 2.0 * (u[1] - 2.0)));
        let set = ConvexSet::Box(BoxSet::uniform(1, -10.0, 10.0).unwrap());
        GameProblem {
            local_dims: vec![1, 1],
            dim_s: 0,
            partial_gradients: vec![f1, f2],
            local_sets: vec![set.clone(), set],
            coupling_a: Matrix::from_row_slice(1, 2, &[1.0, 1.0]),
            coupling_b: Vector::from_element(1, 100.0),
            mu_tilde: 2.0,
            ell_tilde: 2.0,
            ell: 0.0,
            jacobian_u: Some(Arc::new(|_u: &Vector, _s: &Vector| Matrix::identity(2, 2) * 2.0)),
            jacobian_s: None,
        }
    }

    #[test]
    fn skew_part_vanishes() {
        let ge = assemble_game_ge(&decoupled_game()).unwrap();
        let SetValuedOp::SkewPlusCones { skew, .. } = &ge.a_op else { panic!() };
        for k in 0..100 {
            let z = Vector::from_fn(3, |i, _| ((k * 7 + i * 13) % 11) as f64 - 5.0);
            assert!(z.dot(&(skew * &z)).abs() < 1e-12);
        }
    }

    #[test]
    fn game_solution_has_zero_residual() {
        let ge = assemble_game_ge(&decoupled_game()).unwrap();
        let z = Vector::from_row_slice(&[1.0, 2.0, 0.0]);
        assert!(ge.residual(&z, &Vector::zeros(0)) < 1e-14);
        let z_bad = Vector::from_row_slice(&[0.0, 2.0, 0.0]);
        assert!(ge.residual(&z_bad, &Vector::zeros(0)) > 1.0);
    }

    #[test]
    fn hinge_prox_pieces() {
        let t = NonsmoothTerm::Hinge { indices: vec![0], lower: vec![0.0], upper: vec![1.0], weight: 1.0 };
        let p = |x: f64| t.prox(&Vector::from_element(1, x), 0.5)[0];
        assert_eq!(p(2.0), 1.5);
        assert_eq!(p(1.2), 1.0);
        assert_eq!(p(0.5), 0.5);
        assert_eq!(p(-0.2), 0.0);
        assert_eq!(p(-1.0), -0.5);
    }

    #[test]
    fn licq_cases() {
        let mut game = decoupled_game();
        let none = licq_check(&game, &Vector::from_row_slice(&[1.0, 2.0]), 1e-9).unwrap();
        assert!(none.independent && none.active.is_empty());
        game.coupling_a = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        game.coupling_b = Vector::from_row_slice(&[3.0, 3.0]);
        let dup = licq_check(&game, &Vector::from_row_slice(&[1.0, 2.0]), 1e-9).unwrap();
        assert!(!dup.independent);
        assert_eq!(dup.active, vec![0, 1]);
        assert!(licq_check(&game, &Vector::from_row_slice(&[5.0, 2.0]), 1e-9).is_err());
    }
}
