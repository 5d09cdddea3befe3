use serde::{Deserialize, Serialize};

use super::{lti_lyapunov, LtiStructure, Plant, PlantDims};
use crate::error::{FesError, Result};
use crate::linalg::{spectral_norm, Matrix, Vector};

/// `ẋ = A x + B_u u + B_w w + c`, `y = C x + D_w w`.
#[derive(Debug, Clone)]
pub struct LtiPlant {
    pub a: Matrix,
    pub b_u: Matrix,
    pub b_w: Matrix,
    pub c0: Vector,
    pub c_out: Matrix,
    pub d_w: Matrix,
    neg_a_inv: Matrix,
    structure: LtiStructure,
    t_fast: f64,
}

impl LtiPlant {
    pub fn new(a: Matrix, b_u: Matrix, b_w: Matrix, c0: Vector, c_out: Matrix, d_w: Matrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b_u.nrows() != n || b_w.nrows() != n || c0.len() != n || c_out.ncols() != n {
            return Err(FesError::Dimension("LTI plant blocks".into()));
        }
        if d_w.nrows() != c_out.nrows() || d_w.ncols() != b_w.ncols() {
            return Err(FesError::Dimension("LTI feedthrough block".into()));
        }
        let lyapunov = lti_lyapunov(&a, &Matrix::identity(n, n))?;
        let neg_a_inv = -a.clone().try_inverse().ok_or(FesError::NonHurwitz(0.0))?;
        let dp_du = &neg_a_inv * &b_u;
        let t_fast = 1.0 / a.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max);
        Ok(LtiPlant {
            structure: LtiStructure { a: a.clone(), dp_du, lyapunov },
            a,
            b_u,
            b_w,
            c0,
            c_out,
            d_w,
            neg_a_inv,
            t_fast,
        })
    }
}

impl Plant for LtiPlant {
    fn dims(&self) -> PlantDims {
        PlantDims { x: self.a.nrows(), u: self.b_u.ncols(), y: self.c_out.nrows(), w: self.b_w.ncols() }
    }

    fn f(&self, x: &Vector, u: &Vector, w: &Vector) -> Vector {
        &self.a * x + &self.b_u * u + &self.b_w * w + &self.c0
    }

    fn g(&self, x: &Vector, w: &Vector) -> Vector {
        &self.c_out * x + &self.d_w * w
    }

    fn p(&self, u: &Vector, w: &Vector) -> Vector {
        &self.neg_a_inv * (&self.b_u * u + &self.b_w * w + &self.c0)
    }

    fn h_sensitivity(&self, _u: &Vector, _w: &Vector) -> Matrix {
        &self.c_out * &self.structure.dp_du
    }

    fn lti(&self) -> Option<&LtiStructure> {
        Some(&self.structure)
    }

    fn fastest_time_constant(&self) -> f64 {
        self.t_fast
    }

    fn output_lipschitz(&self) -> f64 {
        spectral_norm(&self.c_out)
    }
}

/// `ξ̈ + 0.5ξ̇ + ξ = u + w`, `y = ξ`.
pub fn build_siso_plant() -> LtiPlant {
    let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]);
    let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let c = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
    LtiPlant::new(a, b.clone(), b, Vector::zeros(2), c, Matrix::zeros(1, 1)).expect("SISO plant is Hurwitz")
}

/// Producer and market constants of the pricing game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplyChainParams {
    pub tau_p: Vec<f64>,
    pub tau_m: f64,
    pub k: Vec<f64>,
    pub beta: Vec<f64>,
    /// Cross-price sensitivities `β_ij` (diagonal ignored).
    pub beta_cross: Vec<Vec<f64>>,
    pub cost: Vec<f64>,
    pub sigma_min: f64,
    pub base_demand: Vec<f64>,
}

impl SupplyChainParams {
    pub fn n(&self) -> usize {
        self.tau_p.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 || [self.k.len(), self.beta.len(), self.beta_cross.len(), self.cost.len(), self.base_demand.len()].iter().any(|&l| l != n) {
            return Err(FesError::Dimension("supply-chain parameter vectors".into()));
        }
        if self.beta_cross.iter().any(|r| r.len() != n) {
            return Err(FesError::Dimension("cross-price matrix".into()));
        }
        if self.k.iter().any(|&k| !(k >= 0.0)) {
            return Err(FesError::InvalidParameter("inventory gains must be nonnegative".into()));
        }
        if self.tau_p.iter().any(|&t| !(t > 0.0)) || !(self.tau_m > 0.0) {
            return Err(FesError::InvalidParameter("time constants must be positive".into()));
        }
        if self.beta.iter().any(|&b| !(b >= 0.0)) || self.beta_cross.iter().flatten().any(|&b| !(b >= 0.0)) {
            return Err(FesError::InvalidParameter("market constants must be nonnegative".into()));
        }
        Ok(())
    }

    /// Demand matrix `M` with `d̄ = d^w − M σ`.
    pub fn demand_matrix(&self) -> Matrix {
        let n = self.n();
        Matrix::from_fn(n, n, |i, j| if i == j { self.beta[i] } else { -self.beta_cross[i][j] })
    }

    /// Nominal demand `d̄(σ, d^w)`.
    pub fn nominal_demand(&self, sigma: &Vector, d_w: &Vector) -> Vector {
        d_w - self.demand_matrix() * sigma
    }
}

/// Producers' inventory/production/market dynamics; state per producer is
/// `(s_i − s̄_i, l_i, d_i)`, output `(l_i, d_i)`, input σ, disturbance `d^w`.
pub fn build_supply_chain_plant(params: &SupplyChainParams) -> Result<LtiPlant> {
    params.validate()?;
    let n = params.n();
    let m = params.demand_matrix();
    let mut a = Matrix::zeros(3 * n, 3 * n);
    let mut b_u = Matrix::zeros(3 * n, n);
    let mut b_w = Matrix::zeros(3 * n, n);
    let mut c = Matrix::zeros(2 * n, 3 * n);
    for i in 0..n {
        let o = 3 * i;
        let tp = params.tau_p[i];
        a[(o, o + 1)] = 1.0;
        a[(o, o + 2)] = -1.0;
        a[(o + 1, o)] = -params.k[i] / tp;
        a[(o + 1, o + 1)] = -1.0 / tp;
        a[(o + 1, o + 2)] = 1.0 / tp;
        a[(o + 2, o + 2)] = -1.0 / params.tau_m;
        for j in 0..n {
            b_u[(o + 2, j)] = -m[(i, j)] / params.tau_m;
        }
        b_w[(o + 2, i)] = 1.0 / params.tau_m;
        c[(2 * i, o + 1)] = 1.0;
        c[(2 * i + 1, o + 2)] = 1.0;
    }
    LtiPlant::new(a, b_u, b_w, Vector::zeros(3 * n), c, Matrix::zeros(2 * n, n))
}
