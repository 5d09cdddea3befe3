//! Controller update rules `z⁺ = T(z, s)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{FesError, Result};
use crate::ge_core::{GameProblem, KktNlpProblem, NonsmoothTerm};
use crate::linalg::{all_finite, concat, psd_clamp, spectral_norm, Matrix, Vector};
use crate::operators::{check_fbs_gains, BoxSet, ConvexSet, FbsPreconditioner};
use crate::qp::{solve_qp, QpInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    ProxGrad,
    Fbs,
    JosephyNewton,
    SqpBuilding,
    Hysteresis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant,
    Vanishing { gamma0: f64 },
}

/// Harmonic step `γ0/(k+1)`.
pub fn vanishing_schedule(gamma0: f64, k: usize) -> f64 {
    gamma0 / (k as f64 + 1.0)
}

/// A controller iteration with state `z` and input map `q`.
pub trait Algorithm: Send + Sync {
    fn kind(&self) -> ControllerKind;
    fn dim_z(&self) -> usize;
    /// `u = q(z)`.
    fn input(&self, z: &Vector) -> Vector;
    /// `T(z, s)` at iteration `k`.
    fn step(&self, z: &Vector, s: &Vector, k: usize) -> Result<Vector>;
    /// Metric of the merit function `W = |z − z*|_P`.
    fn metric(&self) -> Matrix {
        Matrix::identity(self.dim_z(), self.dim_z())
    }
    /// Analytic Lipschitz bound of `T` in `s`, when known.
    fn output_lipschitz(&self) -> Option<f64> {
        None
    }
    /// Lipschitz bound of `q`.
    fn input_lipschitz(&self) -> f64 {
        1.0
    }
    fn input_set(&self) -> Option<ConvexSet> {
        None
    }
}

/// Controller state driven by an [`Algorithm`].
#[derive(Clone)]
pub struct Controller {
    pub algorithm: Arc<dyn Algorithm>,
    pub state_z: Vector,
    pub k: usize,
}

impl std::fmt::Debug for Controller {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Controller").field("kind", &self.algorithm.kind()).field("state_z", &self.state_z).field("k", &self.k).finish()
    }
}

impl Controller {
    pub fn new(algorithm: Arc<dyn Algorithm>, z0: Vector) -> Result<Self> {
        if z0.len() != algorithm.dim_z() {
            return Err(FesError::Dimension(format!("z0 has length {}, expected {}", z0.len(), algorithm.dim_z())));
        }
        if !all_finite(&z0) {
            return Err(FesError::NonFinite("initial controller state".into()));
        }
        Ok(Controller { algorithm, state_z: z0, k: 0 })
    }

    pub fn kind(&self) -> ControllerKind {
        self.algorithm.kind()
    }

    pub fn input(&self) -> Vector {
        self.algorithm.input(&self.state_z)
    }

    pub fn step(&mut self, s: &Vector) -> Result<()> {
        let next = self.algorithm.step(&self.state_z, s, self.k)?;
        if !all_finite(&next) {
            return Err(FesError::NonFinite(format!("controller state at step {}", self.k)));
        }
        self.state_z = next;
        self.k += 1;
        Ok(())
    }
}

/// `proj_[lo,hi](z − γ(y − y_ref))`.
pub fn prox_grad_step(z: f64, y: f64, y_ref: f64, gamma: f64, lo: f64, hi: f64) -> f64 {
    (z - gamma * (y - y_ref)).clamp(lo, hi)
}

/// Projected gradient on `½|y − y_ref|²` with `u = z`.
#[derive(Debug, Clone)]
pub struct ProxGrad {
    pub y_ref: Vector,
    pub gamma: f64,
    pub schedule: StepSchedule,
    pub set: BoxSet,
}

impl ProxGrad {
    pub fn new(y_ref: Vector, gamma: f64, schedule: StepSchedule, set: BoxSet) -> Result<Self> {
        let g = match schedule {
            StepSchedule::Constant => gamma,
            StepSchedule::Vanishing { gamma0 } => gamma0,
        };
        if !(g > 0.0 && g <= 1.0) {
            return Err(FesError::InadmissibleGains(format!("step {g} outside (0, 1]")));
        }
        if y_ref.len() != set.dim() {
            return Err(FesError::Dimension("reference and box".into()));
        }
        Ok(ProxGrad { y_ref, gamma, schedule, set })
    }

    pub fn step_size(&self, k: usize) -> f64 {
        match self.schedule {
            StepSchedule::Constant => self.gamma,
            StepSchedule::Vanishing { gamma0 } => vanishing_schedule(gamma0, k),
        }
    }

    /// Contraction rate √(1 − γ(2 − γ)) of the constant-step map on a static plant.
    pub fn rate(&self) -> f64 {
        (1.0 - self.gamma * (2.0 - self.gamma)).max(0.0).sqrt()
    }
}

impl Algorithm for ProxGrad {
    fn kind(&self) -> ControllerKind {
        ControllerKind::ProxGrad
    }
    fn dim_z(&self) -> usize {
        self.y_ref.len()
    }
    fn input(&self, z: &Vector) -> Vector {
        z.clone()
    }
    fn step(&self, z: &Vector, s: &Vector, k: usize) -> Result<Vector> {
        let g = self.step_size(k);
        Ok(Vector::from_fn(z.len(), |i, _| {
            prox_grad_step(z[i], s[i], self.y_ref[i], g, self.set.lower[i], self.set.upper[i])
        }))
    }
    fn output_lipschitz(&self) -> Option<f64> {
        Some(match self.schedule {
            StepSchedule::Constant => self.gamma,
            StepSchedule::Vanishing { gamma0 } => gamma0,
        })
    }
    fn input_set(&self) -> Option<ConvexSet> {
        Some(ConvexSet::Box(self.set.clone()))
    }
}

/// Preconditioned forward–backward splitting for a game, `z = (u, λ)`.
#[derive(Debug, Clone)]
pub struct Fbs {
    pub game: GameProblem,
    pub pre: FbsPreconditioner,
    pub delta: f64,
}

impl Fbs {
    pub fn new(game: GameProblem, gammas: Vec<f64>, gamma_c: f64, delta: f64) -> Result<Self> {
        game.validate()?;
        let pre = FbsPreconditioner::new(game.local_dims.clone(), gammas, gamma_c, game.coupling_a.clone())?;
        check_fbs_gains(&pre, delta, game.mu_tilde, game.ell_tilde)?;
        Ok(Fbs { game, pre, delta })
    }

    /// Largest admissible gains for `δ = delta_factor · ℓ̃²/(2μ̃)`.
    pub fn with_max_gains(game: GameProblem, delta_factor: f64) -> Result<Self> {
        if !(delta_factor > 1.0) {
            return Err(FesError::InadmissibleGains("delta factor must exceed 1".into()));
        }
        let delta = delta_factor * game.ell_tilde * game.ell_tilde / (2.0 * game.mu_tilde);
        let mut norms = Vec::new();
        for i in 0..game.n_agents() {
            let off = game.offset(i);
            norms.push(spectral_norm(&game.coupling_a.columns(off, game.local_dims[i]).into_owned()));
        }
        let gammas = norms.iter().map(|n| 1.0 / (n + delta)).collect();
        let gamma_c = 1.0 / (norms.iter().sum::<f64>() + delta);
        Fbs::new(game, gammas, gamma_c, delta)
    }

    /// Averagedness constant `η = 2βδ/(4βδ − 1)` with `β = μ̃/ℓ̃²`.
    pub fn averagedness(&self) -> f64 {
        let bd = self.game.mu_tilde / (self.game.ell_tilde * self.game.ell_tilde) * self.delta;
        2.0 * bd / (4.0 * bd - 1.0)
    }

    /// One semi-decentralized step.
    pub fn fbs_step(&self, z: &Vector, s: &Vector) -> Vector {
        let n_u = self.game.n_u();
        let m = self.game.n_coupling();
        let u = z.rows(0, n_u).into_owned();
        let lam = z.rows(n_u, m).into_owned();
        let at_l = self.game.coupling_a.transpose() * &lam;
        let mut u_next = Vector::zeros(n_u);
        for i in 0..self.game.n_agents() {
            let off = self.game.offset(i);
            let d = self.game.local_dims[i];
            let grad = (self.game.partial_gradients[i])(&u, s);
            let arg = u.rows(off, d) - (grad + at_l.rows(off, d)) * self.pre.gammas[i];
            u_next.rows_mut(off, d).copy_from(&self.game.local_sets[i].project(&arg));
        }
        let refl = &u_next * 2.0 - &u;
        let lam_next = (lam + (&self.game.coupling_a * refl - &self.game.coupling_b) * self.pre.gamma_c).map(|v| v.max(0.0));
        concat(&[&u_next, &lam_next])
    }
}

impl Algorithm for Fbs {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Fbs
    }
    fn dim_z(&self) -> usize {
        self.game.n_u() + self.game.n_coupling()
    }
    fn input(&self, z: &Vector) -> Vector {
        z.rows(0, self.game.n_u()).into_owned()
    }
    fn step(&self, z: &Vector, s: &Vector, _k: usize) -> Result<Vector> {
        Ok(self.fbs_step(z, s))
    }
    fn metric(&self) -> Matrix {
        self.pre.phi().clone()
    }
    fn output_lipschitz(&self) -> Option<f64> {
        let g = self.pre.gammas.iter().copied().fold(0.0, f64::max);
        let a = spectral_norm(&self.game.coupling_a);
        Some(self.game.ell * g * (1.0 + 4.0 * self.pre.gamma_c.powi(2) * a * a).sqrt())
    }
    fn input_set(&self) -> Option<ConvexSet> {
        Some(self.game.local_set())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianPolicy {
    /// Lagrangian Hessian projected to the PSD cone.
    ExactClamped,
    Identity,
}

/// Data of one linearized step: Hessian and gradient over `(ξ, u)`.
struct StepModel {
    hess: Matrix,
    grad: Vector,
    slack_weight: f64,
    slack_reg: f64,
}

/// Solves the linearized problem at `z = (ξ, u, λ)` and returns
/// `(ξ + d_ξ, u + d_u, ν)` with ν the multiplier of the equality row.
fn linearized_step(nlp: &KktNlpProblem, z: &Vector, s: &Vector, sens: &Matrix, model: &StepModel) -> Result<Vector> {
    let (ny, nu) = (nlp.n_y, nlp.n_u);
    let (xi, u, _) = nlp.split(z);
    let (hinge_idx, lower, upper) = match &nlp.varphi {
        NonsmoothTerm::Zero => (Vec::new(), Vec::new(), Vec::new()),
        NonsmoothTerm::Hinge { indices, lower, upper, .. } => (indices.clone(), lower.clone(), upper.clone()),
    };
    let nh = hinge_idx.len();
    let n = ny + nu + nh;

    let mut h = Matrix::zeros(n, n);
    h.view_mut((0, 0), (ny + nu, ny + nu)).copy_from(&model.hess);
    for j in 0..nh {
        h[(ny + nu + j, ny + nu + j)] = model.slack_reg;
    }
    let mut f = Vector::zeros(n);
    f.rows_mut(0, ny + nu).copy_from(&model.grad);
    for j in 0..nh {
        f[ny + nu + j] = model.slack_weight;
    }

    // −d_ξ + ∇h d_u = ξ − s, so that the equality multiplier equals λ
    let mut a_eq = Matrix::zeros(ny, n);
    a_eq.view_mut((0, 0), (ny, ny)).copy_from(&(-Matrix::identity(ny, ny)));
    a_eq.view_mut((0, ny), (ny, nu)).copy_from(sens);
    let b_eq = &xi - s;

    let (bu, bb) = nlp.u_set.as_rows();
    let rows = bu.nrows() + 3 * nh;
    let mut a_in = Matrix::zeros(rows, n);
    let mut b_in = Vector::zeros(rows);
    a_in.view_mut((0, ny), (bu.nrows(), nu)).copy_from(&bu);
    b_in.rows_mut(0, bu.nrows()).copy_from(&(&bb - &bu * &u));
    for (j, &i) in hinge_idx.iter().enumerate() {
        let r = bu.nrows() + 3 * j;
        let sj = ny + nu + j;
        a_in[(r, i)] = 1.0;
        a_in[(r, sj)] = -1.0;
        b_in[r] = upper[j] - xi[i];
        a_in[(r + 1, i)] = -1.0;
        a_in[(r + 1, sj)] = -1.0;
        b_in[r + 1] = xi[i] - lower[j];
        a_in[(r + 2, sj)] = -1.0;
    }

    let qp = QpInstance::new(h, f).with_eq(a_eq, b_eq).with_ineq(a_in, b_in);
    let sol = solve_qp(&qp)?;
    let d_xi = sol.x.rows(0, ny).into_owned();
    let d_u = sol.x.rows(ny, nu).into_owned();
    let u_next = match &nlp.u_set {
        ConvexSet::Box(b) => b.project(&(&u + d_u)),
        _ => &u + d_u,
    };
    Ok(nlp.join(&(&xi + d_xi), &u_next, &sol.duals_eq))
}

/// Josephy–Newton step on the KKT system of a composite NLP.
#[derive(Debug, Clone)]
pub struct JosephyNewton {
    pub nlp: KktNlpProblem,
    pub hessian: HessianPolicy,
    /// Quadratic weight on hinge slacks, needed for strict convexity.
    pub slack_reg: f64,
}

impl JosephyNewton {
    pub fn new(nlp: KktNlpProblem, hessian: HessianPolicy) -> Self {
        JosephyNewton { nlp, hessian, slack_reg: 1e-8 }
    }

    pub fn jn_step(&self, z: &Vector, s: &Vector) -> Result<Vector> {
        let (xi, u, _) = self.nlp.split(z);
        let w = (self.nlp.w_estimate)(s, &u);
        let sens = (self.nlp.h_sensitivity)(&u, &w);
        let n = self.nlp.n_y + self.nlp.n_u;
        let hess = match self.hessian {
            HessianPolicy::ExactClamped => psd_clamp(&self.nlp.lagrangian_hessian(z, &w)),
            HessianPolicy::Identity => Matrix::identity(n, n),
        };
        let (gx, gu) = (self.nlp.phi_grad)(&xi, &u);
        let weight = match &self.nlp.varphi {
            NonsmoothTerm::Zero => 0.0,
            NonsmoothTerm::Hinge { weight, .. } => *weight,
        };
        let model = StepModel { hess, grad: concat(&[&gx, &gu]), slack_weight: weight, slack_reg: self.slack_reg };
        linearized_step(&self.nlp, z, s, &sens, &model)
    }
}

impl Algorithm for JosephyNewton {
    fn kind(&self) -> ControllerKind {
        ControllerKind::JosephyNewton
    }
    fn dim_z(&self) -> usize {
        self.nlp.dim_z()
    }
    fn input(&self, z: &Vector) -> Vector {
        z.rows(self.nlp.n_y, self.nlp.n_u).into_owned()
    }
    fn step(&self, z: &Vector, s: &Vector, _k: usize) -> Result<Vector> {
        self.jn_step(z, s)
    }
    fn input_set(&self) -> Option<ConvexSet> {
        Some(self.nlp.u_set.clone())
    }
}

/// Building SQP step: `ε/2|(d_ξ,d_u)|² + ½cᵀd_u + η/2 Σσ` over the
/// linearized steady state, with comfort slacks.
#[derive(Debug, Clone)]
pub struct SqpBuilding {
    pub nlp: KktNlpProblem,
    pub prices: Vector,
    pub eta: f64,
    pub eps: f64,
    /// Quadratic weight on the slacks, needed for strict convexity.
    pub slack_reg: f64,
}

impl SqpBuilding {
    pub fn new(nlp: KktNlpProblem, prices: Vector, eta: f64, eps: f64) -> Result<Self> {
        if !(eta > 0.0) || !(eps > 0.0) {
            return Err(FesError::InvalidParameter("SQP needs η > 0 and ε > 0".into()));
        }
        if prices.len() != nlp.n_u {
            return Err(FesError::Dimension("price vector".into()));
        }
        if !matches!(nlp.varphi, NonsmoothTerm::Hinge { .. }) {
            return Err(FesError::InvalidParameter("SQP building step needs a hinge comfort term".into()));
        }
        Ok(SqpBuilding { nlp, prices, eta, eps, slack_reg: eps })
    }

    pub fn sqp_building_step(&self, z: &Vector, y: &Vector) -> Result<Vector> {
        let (_, u, _) = self.nlp.split(z);
        let w = (self.nlp.w_estimate)(y, &u);
        let sens = (self.nlp.h_sensitivity)(&u, &w);
        let (ny, nu) = (self.nlp.n_y, self.nlp.n_u);
        let mut grad = Vector::zeros(ny + nu);
        grad.rows_mut(ny, nu).copy_from(&(&self.prices * 0.5));
        let model = StepModel {
            hess: Matrix::identity(ny + nu, ny + nu) * self.eps,
            grad,
            slack_weight: 0.5 * self.eta,
            slack_reg: self.slack_reg,
        };
        linearized_step(&self.nlp, z, y, &sens, &model)
    }
}

impl Algorithm for SqpBuilding {
    fn kind(&self) -> ControllerKind {
        ControllerKind::SqpBuilding
    }
    fn dim_z(&self) -> usize {
        self.nlp.dim_z()
    }
    fn input(&self, z: &Vector) -> Vector {
        z.rows(self.nlp.n_y, self.nlp.n_u).into_owned()
    }
    fn step(&self, z: &Vector, s: &Vector, _k: usize) -> Result<Vector> {
        self.sqp_building_step(z, s)
    }
    fn input_set(&self) -> Option<ConvexSet> {
        Some(self.nlp.u_set.clone())
    }
}
