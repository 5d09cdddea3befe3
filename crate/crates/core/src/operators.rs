//! Convex sets, projections, normal-cone operators and the preconditioned
//! forward–backward resolvent.

use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FesError, Result};
use crate::linalg::{p_norm, spectral_norm, Matrix, Vector};
use crate::qp::{solve_qp, QpInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lower: Vector,
    pub upper: Vector,
}

impl BoxSet {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(FesError::Dimension("box bounds".into()));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(FesError::EmptySet(format!("box lower[{i}] > upper[{i}]")));
        }
        Ok(BoxSet { lower, upper })
    }

    pub fn uniform(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(Vector::from_element(n, lo), Vector::from_element(n, hi))
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, x: &Vector) -> Vector {
        Vector::from_fn(x.len(), |i, _| x[i].clamp(self.lower[i], self.upper[i]))
    }

    /// Inequality rows `[I; −I] x ≤ [upper; −lower]`, skipping infinite bounds.
    pub fn as_rows(&self) -> (Matrix, Vector) {
        let n = self.dim();
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for i in 0..n {
            if self.upper[i].is_finite() {
                let mut r = vec![0.0; n];
                r[i] = 1.0;
                rows.push(r);
                rhs.push(self.upper[i]);
            }
            if self.lower[i].is_finite() {
                let mut r = vec![0.0; n];
                r[i] = -1.0;
                rows.push(r);
                rhs.push(-self.lower[i]);
            }
        }
        let a = Matrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        (a, Vector::from_vec(rhs))
    }
}

/// Nonempty polyhedron `{x | B x ≤ b}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyhedron {
    pub b_mat: Matrix,
    pub b_vec: Vector,
    feasible_point: Vector,
}

impl Polyhedron {
    pub fn new(b_mat: Matrix, b_vec: Vector) -> Result<Self> {
        if b_mat.nrows() != b_vec.len() {
            return Err(FesError::Dimension("polyhedron rows".into()));
        }
        let n = b_mat.ncols();
        let qp = QpInstance::new(Matrix::identity(n, n), Vector::zeros(n)).with_ineq(b_mat.clone(), b_vec.clone());
        let feasible_point = solve_qp(&qp)
            .map_err(|e| FesError::EmptySet(format!("polyhedron: {e}")))?
            .x;
        Ok(Polyhedron { b_mat, b_vec, feasible_point })
    }

    pub fn dim(&self) -> usize {
        self.b_mat.ncols()
    }

    pub fn feasible_point(&self) -> &Vector {
        &self.feasible_point
    }

    pub fn project(&self, x: &Vector) -> Vector {
        let n = self.dim();
        let qp = QpInstance::new(Matrix::identity(n, n), -x).with_ineq(self.b_mat.clone(), self.b_vec.clone());
        // nonempty by construction and H = I, so the QP always has a solution
        solve_qp(&qp).expect("projection onto a certified nonempty polyhedron").x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConvexSet {
    Box(BoxSet),
    Polyhedron(Polyhedron),
    NonnegOrthant(usize),
    Product(Vec<ConvexSet>),
}

impl ConvexSet {
    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Box(b) => b.dim(),
            ConvexSet::Polyhedron(p) => p.dim(),
            ConvexSet::NonnegOrthant(n) => *n,
            ConvexSet::Product(parts) => parts.iter().map(|p| p.dim()).sum(),
        }
    }

    pub fn project(&self, x: &Vector) -> Vector {
        match self {
            ConvexSet::Box(b) => b.project(x),
            ConvexSet::Polyhedron(p) => p.project(x),
            ConvexSet::NonnegOrthant(_) => x.map(|v| v.max(0.0)),
            ConvexSet::Product(parts) => {
                let mut out = Vector::zeros(x.len());
                let mut off = 0;
                for p in parts {
                    let d = p.dim();
                    let seg = x.rows(off, d).into_owned();
                    out.rows_mut(off, d).copy_from(&p.project(&seg));
                    off += d;
                }
                out
            }
        }
    }

    /// Largest constraint violation of `x` (zero when feasible).
    pub fn violation(&self, x: &Vector) -> f64 {
        match self {
            ConvexSet::Box(b) => (0..x.len())
                .map(|i| (b.lower[i] - x[i]).max(x[i] - b.upper[i]).max(0.0))
                .fold(0.0, f64::max),
            ConvexSet::Polyhedron(p) => (&p.b_mat * x - &p.b_vec).iter().fold(0.0f64, |a, v| a.max(*v)),
            ConvexSet::NonnegOrthant(_) => x.iter().fold(0.0f64, |a, v| a.max(-v)),
            ConvexSet::Product(parts) => {
                let mut off = 0;
                let mut worst = 0.0f64;
                for p in parts {
                    let d = p.dim();
                    worst = worst.max(p.violation(&x.rows(off, d).into_owned()));
                    off += d;
                }
                worst
            }
        }
    }

    /// Inequality-row representation `(B, b)` of the set.
    pub fn as_rows(&self) -> (Matrix, Vector) {
        match self {
            ConvexSet::Box(b) => b.as_rows(),
            ConvexSet::Polyhedron(p) => (p.b_mat.clone(), p.b_vec.clone()),
            ConvexSet::NonnegOrthant(n) => (-Matrix::identity(*n, *n), Vector::zeros(*n)),
            ConvexSet::Product(parts) => {
                let n = self.dim();
                let blocks: Vec<(Matrix, Vector)> = parts.iter().map(|p| p.as_rows()).collect();
                let rows: usize = blocks.iter().map(|b| b.0.nrows()).sum();
                let mut a = Matrix::zeros(rows, n);
                let mut b = Vector::zeros(rows);
                let (mut r0, mut c0) = (0, 0);
                for (bm, bv) in &blocks {
                    a.view_mut((r0, c0), (bm.nrows(), bm.ncols())).copy_from(bm);
                    b.rows_mut(r0, bv.len()).copy_from(bv);
                    r0 += bm.nrows();
                    c0 += bm.ncols();
                }
                (a, b)
            }
        }
    }
}

/// Set-valued operator 𝒜 of a generalized equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SetValuedOp {
    Zero { dim: usize },
    NormalConeBox(BoxSet),
    NormalConePolyhedron(Polyhedron),
    NormalConeNonnegOrthant(usize),
    /// `z ↦ M z + N_K(z)` with skew-symmetric `M` and a product set `K`.
    SkewPlusCones { skew: Matrix, cones: ConvexSet },
}

impl SetValuedOp {
    pub fn dim(&self) -> usize {
        match self {
            SetValuedOp::Zero { dim } => *dim,
            SetValuedOp::NormalConeBox(b) => b.dim(),
            SetValuedOp::NormalConePolyhedron(p) => p.dim(),
            SetValuedOp::NormalConeNonnegOrthant(n) => *n,
            SetValuedOp::SkewPlusCones { cones, .. } => cones.dim(),
        }
    }

    /// Natural-map residual of `0 ∈ g + 𝒜(z)`.
    pub fn natural_residual(&self, z: &Vector, g: &Vector) -> Vector {
        match self {
            SetValuedOp::Zero { .. } => g.clone(),
            SetValuedOp::NormalConeBox(b) => z - b.project(&(z - g)),
            SetValuedOp::NormalConePolyhedron(p) => z - p.project(&(z - g)),
            SetValuedOp::NormalConeNonnegOrthant(_) => z - (z - g).map(|v| v.max(0.0)),
            SetValuedOp::SkewPlusCones { skew, cones } => {
                let full = g + skew * z;
                z - cones.project(&(z - full))
            }
        }
    }
}

/// Block preconditioner Φ = [[diag(γᵢ)⁻¹, −Aᵀ], [−A, γc⁻¹ I]].
#[derive(Debug, Clone)]
pub struct FbsPreconditioner {
    pub agent_dims: Vec<usize>,
    pub gammas: Vec<f64>,
    pub gamma_c: f64,
    pub a: Matrix,
    phi: Matrix,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl FbsPreconditioner {
    pub fn new(agent_dims: Vec<usize>, gammas: Vec<f64>, gamma_c: f64, a: Matrix) -> Result<Self> {
        let n_u: usize = agent_dims.iter().sum();
        if gammas.len() != agent_dims.len() || a.ncols() != n_u {
            return Err(FesError::Dimension("preconditioner blocks".into()));
        }
        if gammas.iter().any(|g| !(*g > 0.0)) || !(gamma_c > 0.0) {
            return Err(FesError::InadmissibleGains("step sizes must be positive".into()));
        }
        let m = a.nrows();
        let mut phi = Matrix::zeros(n_u + m, n_u + m);
        let mut off = 0;
        for (i, &d) in agent_dims.iter().enumerate() {
            for k in 0..d {
                phi[(off + k, off + k)] = 1.0 / gammas[i];
            }
            off += d;
        }
        for r in 0..m {
            phi[(n_u + r, n_u + r)] = 1.0 / gamma_c;
            for c in 0..n_u {
                phi[(c, n_u + r)] = -a[(r, c)];
                phi[(n_u + r, c)] = -a[(r, c)];
            }
        }
        let chol = match Cholesky::new(phi.clone()) {
            Some(ch) => ch,
            None => {
                let piv = crate::linalg::ldl_pivots(&phi);
                let index = piv.len() - 1;
                return Err(FesError::NotPositiveDefinite { index, pivot: piv[index] });
            }
        };
        Ok(FbsPreconditioner { agent_dims, gammas, gamma_c, a, phi, chol })
    }

    pub fn phi(&self) -> &Matrix {
        &self.phi
    }

    pub fn n_u(&self) -> usize {
        self.agent_dims.iter().sum()
    }

    pub fn solve(&self, rhs: &Vector) -> Vector {
        self.chol.solve(rhs)
    }

    /// Column block `A_i` belonging to agent `i`.
    pub fn agent_block(&self, i: usize) -> Matrix {
        let off: usize = self.agent_dims[..i].iter().sum();
        self.a.columns(off, self.agent_dims[i]).into_owned()
    }

    pub fn lambda_min(&self) -> f64 {
        nalgebra::SymmetricEigen::new(self.phi.clone()).eigenvalues.min()
    }
}

/// Evaluates `(id + Φ⁻¹𝒜)⁻¹ v` blockwise: agent projections first, then the
/// reflected dual update.
pub fn resolvent_fbs(sets: &[ConvexSet], pre: &FbsPreconditioner, v: &Vector) -> Vector {
    let n_u = pre.n_u();
    let m = pre.a.nrows();
    let v_u = v.rows(0, n_u).into_owned();
    let v_l = v.rows(n_u, m).into_owned();
    let at_l = pre.a.transpose() * &v_l;
    let mut u = Vector::zeros(n_u);
    let mut off = 0;
    for (i, set) in sets.iter().enumerate() {
        let d = pre.agent_dims[i];
        let arg = v_u.rows(off, d) - at_l.rows(off, d) * pre.gammas[i];
        u.rows_mut(off, d).copy_from(&set.project(&arg));
        off += d;
    }
    let refl = &u * 2.0 - &v_u;
    let lam = (v_l + (&pre.a * refl) * pre.gamma_c).map(|x| x.max(0.0));
    let mut out = Vector::zeros(n_u + m);
    out.rows_mut(0, n_u).copy_from(&u);
    out.rows_mut(n_u, m).copy_from(&lam);
    out
}

/// Admissibility of FBS gains.
pub fn check_fbs_gains(pre: &FbsPreconditioner, delta: f64, mu_tilde: f64, ell_tilde: f64) -> Result<()> {
    let bound = ell_tilde * ell_tilde / (2.0 * mu_tilde);
    if !(delta > bound) {
        return Err(FesError::InadmissibleGains(format!("delta {delta} must exceed {bound}")));
    }
    let mut sum = 0.0;
    for i in 0..pre.agent_dims.len() {
        let na = spectral_norm(&pre.agent_block(i));
        sum += na;
        let cap = 1.0 / (na + delta);
        if pre.gammas[i] > cap * (1.0 + 1e-12) {
            return Err(FesError::InadmissibleGains(format!("gamma_{i} = {} exceeds {cap}", pre.gammas[i])));
        }
    }
    let cap_c = 1.0 / (sum + delta);
    if pre.gamma_c > cap_c * (1.0 + 1e-12) {
        return Err(FesError::InadmissibleGains(format!("gamma_c = {} exceeds {cap_c}", pre.gamma_c)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqneEstimate {
    /// Largest ρ satisfied by every sample; `f64::INFINITY` when all steps are zero.
    pub rho: f64,
    pub pass: bool,
    pub samples: usize,
}

/// Sampling falsifier for `|T(z)−z*|²_P ≤ |z−z*|²_P − ρ|T(z)−z|²_P`.
pub fn sqne_probe<T>(t: T, z_star: &Vector, p: &Matrix, samples: usize, radius: f64, seed: u64) -> Result<SqneEstimate>
where
    T: Fn(&Vector) -> Vector,
{
    let res = (t(z_star) - z_star).norm();
    if res > 1e-8 {
        return Err(FesError::NotFixedPoint(res));
    }
    let n = z_star.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rho = f64::INFINITY;
    for _ in 0..samples {
        let dir = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r = radius * rng.gen::<f64>().powf(1.0 / n as f64);
        let z = z_star + dir.normalize() * r;
        let tz = t(&z);
        let lhs = p_norm(&(&z - z_star), p).powi(2) - p_norm(&(&tz - z_star), p).powi(2);
        let step = p_norm(&(&tz - &z), p).powi(2);
        if step > 0.0 {
            rho = rho.min((lhs / step).max(0.0));
        } else if lhs < -1e-14 {
            rho = 0.0;
        }
    }
    Ok(SqneEstimate { rho, pass: rho > 0.0, samples })
}
