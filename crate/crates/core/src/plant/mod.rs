//! Continuous-time plants, disturbance signals, zero-order-hold integration
//! and Lyapunov analysis for LTI models.

mod building;
mod disturbance;
mod lti;

pub use building::{BuildingParams, BuildingPlant, BUILDING_ROOMS};
pub use disturbance::DisturbanceSignal;
pub use lti::{build_siso_plant, build_supply_chain_plant, LtiPlant, SupplyChainParams};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FesError, Result};
use crate::linalg::{sym_eig_min_max, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantDims {
    pub x: usize,
    pub u: usize,
    pub y: usize,
    pub w: usize,
}

/// A plant `ẋ = f(x,u,w)`, `y = g(x,w)` with steady-state maps `p`, `h`.
pub trait Plant: Send + Sync {
    fn dims(&self) -> PlantDims;
    fn f(&self, x: &Vector, u: &Vector, w: &Vector) -> Vector;
    fn g(&self, x: &Vector, w: &Vector) -> Vector;
    /// Steady state for held `(u, w)`.
    fn p(&self, u: &Vector, w: &Vector) -> Vector;
    fn h(&self, u: &Vector, w: &Vector) -> Vector {
        self.g(&self.p(u, w), w)
    }
    /// ∇ᵤh(u, w).
    fn h_sensitivity(&self, u: &Vector, w: &Vector) -> Matrix;
    /// Lyapunov data when the plant is LTI.
    fn lti(&self) -> Option<&LtiStructure> {
        None
    }
    /// Smallest dynamic time scale, used to pick integrator substeps.
    fn fastest_time_constant(&self) -> f64;
    /// Lipschitz bound of `g` in `x`.
    fn output_lipschitz(&self) -> f64;
}

/// Linear structure exposed by LTI plants for certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiStructure {
    pub a: Matrix,
    /// Constant ∂p/∂u.
    pub dp_du: Matrix,
    pub lyapunov: LyapunovCertificate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCertificate {
    #[serde(with = "crate::linalg::rows_serde")]
    pub p: Matrix,
    pub alpha3: f64,
    pub alpha4: f64,
    pub alpha5: f64,
    pub residual: f64,
}

/// Solves `AᵀP + PA + Q = 0` for symmetric `P`, so that `V = ½|x|²_P`
/// decays along `ẋ = Ax` with `V̇ = −½xᵀQx`.
pub fn lti_lyapunov(a: &Matrix, q: &Matrix) -> Result<LyapunovCertificate> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(FesError::Dimension("lyapunov operands".into()));
    }
    let abscissa = a.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    if !(abscissa < 0.0) {
        return Err(FesError::NonHurwitz(abscissa));
    }
    let idx = |i: usize, j: usize| {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * n - i * (i + 1) / 2 + j
    };
    let m = n * (n + 1) / 2;
    let mut lhs = DMatrix::zeros(m, m);
    let mut rhs = Vector::zeros(m);
    for i in 0..n {
        for j in i..n {
            let row = idx(i, j);
            rhs[row] = -q[(i, j)];
            for k in 0..n {
                // (AᵀP)_ij = Σ_k A_ki P_kj ; (PA)_ij = Σ_k P_ik A_kj
                lhs[(row, idx(k, j))] += a[(k, i)];
                lhs[(row, idx(i, k))] += a[(k, j)];
            }
        }
    }
    let sol = lhs.lu().solve(&rhs).ok_or(FesError::NonHurwitz(abscissa))?;
    let p = Matrix::from_fn(n, n, |i, j| sol[idx(i, j)]);
    let residual = (a.transpose() * &p + &p * a + q).amax();
    let (lmin, lmax) = sym_eig_min_max(&p);
    let (qmin, _) = sym_eig_min_max(q);
    Ok(LyapunovCertificate { p, alpha3: lmin, alpha4: lmax, alpha5: qmin / lmax, residual })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensePoint {
    pub t: f64,
    pub x: Vector,
    pub y: Vector,
    pub u: Vector,
}

#[derive(Debug, Clone)]
pub struct HoldResult {
    pub x_end: Vector,
    pub dense: Vec<DensePoint>,
    /// Time of the first substep whose state became non-finite or exceeded the threshold.
    pub blow_up: Option<f64>,
}

/// Substep count with substep ≤ min(τ/20, 0.05·fastest time constant).
pub fn default_substeps(plant: &dyn Plant, tau: f64) -> usize {
    let h_max = (tau / 20.0).min(0.05 * plant.fastest_time_constant());
    ((tau / h_max) - 1e-9).ceil().max(1.0) as usize
}

/// Classical RK4 over `[t0, t0+τ]` with `u` held constant. Dense rows are
/// recorded at the start of every substep when `record_dense` is set.
#[allow(clippy::too_many_arguments)]
pub fn integrate_hold(
    plant: &dyn Plant,
    x0: &Vector,
    u: &Vector,
    w: &DisturbanceSignal,
    t0: f64,
    tau: f64,
    substeps: usize,
    record_dense: bool,
    blow_up_threshold: f64,
) -> Result<HoldResult> {
    if substeps == 0 || !(tau > 0.0) {
        return Err(FesError::InvalidParameter("integrate_hold needs substeps ≥ 1 and τ > 0".into()));
    }
    let h = tau / substeps as f64;
    let mut x = x0.clone();
    let mut dense = Vec::with_capacity(if record_dense { substeps } else { 0 });
    for j in 0..substeps {
        let t = t0 + j as f64 * h;
        if record_dense {
            let wt = w.value(t);
            dense.push(DensePoint { t, x: x.clone(), y: plant.g(&x, &wt), u: u.clone() });
        }
        let k1 = plant.f(&x, u, &w.value(t));
        let k2 = plant.f(&(&x + &k1 * (0.5 * h)), u, &w.value(t + 0.5 * h));
        let k3 = plant.f(&(&x + &k2 * (0.5 * h)), u, &w.value(t + 0.5 * h));
        let k4 = plant.f(&(&x + &k3 * h), u, &w.value(t + h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if x.iter().any(|v| !v.is_finite() || v.abs() > blow_up_threshold) {
            return Ok(HoldResult { x_end: x, dense, blow_up: Some(t + h) });
        }
    }
    Ok(HoldResult { x_end: x, dense, blow_up: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;
    impl Plant for Decay {
        fn dims(&self) -> PlantDims {
            PlantDims { x: 1, u: 1, y: 1, w: 1 }
        }
        fn f(&self, x: &Vector, u: &Vector, _w: &Vector) -> Vector {
            -x + u
        }
        fn g(&self, x: &Vector, _w: &Vector) -> Vector {
            x.clone()
        }
        fn p(&self, u: &Vector, _w: &Vector) -> Vector {
            u.clone()
        }
        fn h_sensitivity(&self, _u: &Vector, _w: &Vector) -> Matrix {
            Matrix::identity(1, 1)
        }
        fn fastest_time_constant(&self) -> f64 {
            1.0
        }
        fn output_lipschitz(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn scalar_decay() {
        let w = DisturbanceSignal::Constant { value: vec![0.0] };
        let r = integrate_hold(&Decay, &Vector::from_element(1, 1.0), &Vector::zeros(1), &w, 0.0, 1.0, 100, false, 1e9).unwrap();
        assert!((r.x_end[0] - (-1.0f64).exp()).abs() <= 1e-6);
    }

    #[test]
    fn lyapunov_diagonal() {
        let a = -Matrix::identity(2, 2);
        let c = lti_lyapunov(&a, &Matrix::identity(2, 2)).unwrap();
        assert!((&c.p - Matrix::identity(2, 2) * 0.5).amax() < 1e-14);
        assert!((c.alpha3 - 0.5).abs() < 1e-14 && (c.alpha4 - 0.5).abs() < 1e-14);
        assert!((c.alpha5 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_second_order() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]);
        let c = lti_lyapunov(&a, &Matrix::identity(2, 2)).unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[2.25, 0.5, 0.5, 2.0]);
        assert!((&c.p - expected).amax() <= 1e-12);
        assert!(c.residual <= 1e-12);
    }

    #[test]
    fn non_hurwitz_rejected() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(matches!(lti_lyapunov(&a, &Matrix::identity(2, 2)), Err(FesError::NonHurwitz(_))));
    }

    #[test]
    fn substep_rule() {
        assert_eq!(default_substeps(&Decay, 1.0), 20);
        assert_eq!(default_substeps(&Decay, 0.1), 20);
    }
}
