use nalgebra::LU;
use serde::{Deserialize, Serialize};

use super::{Plant, PlantDims};
use crate::error::{FesError, Result};
use crate::linalg::{Matrix, Vector};
use crate::operators::BoxSet;

pub const BUILDING_ROOMS: usize = 5;
const NX: usize = BUILDING_ROOMS + 1;
const NU: usize = 3 + BUILDING_ROOMS;
const NY: usize = BUILDING_ROOMS + 2;
const NW: usize = 3 + BUILDING_ROOMS;

/// Thermal RC surrogate: five rooms in a row sharing one envelope node.
///
/// Inputs `u = (ṁ, P_heat, P_cool, r_1..r_5)` in kg/s, W, W and W/m².
/// Disturbances `w = (T_amb, T_ground, solar, q_occ,1..q_occ,5)` in °C,
/// °C, W/m² and W. Outputs are the room, ambient and ground temperatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildingParams {
    /// Heat capacity of each room node (J/K).
    pub c_room: f64,
    /// Heat capacity of the envelope node (J/K).
    pub c_env: f64,
    /// Conductances (W/K).
    pub ua_room_env: f64,
    pub ua_room_amb: f64,
    pub ua_room_room: f64,
    pub ua_env_amb: f64,
    pub ua_env_ground: f64,
    pub c_p_air: f64,
    pub floor_area: Vec<f64>,
    /// Effective solar aperture per room and for the envelope (m²).
    pub solar_room: Vec<f64>,
    pub solar_env: f64,
    /// Share of the AHU supply air delivered to each room.
    pub ahu_share: Vec<f64>,
    pub airflow_max: f64,
    pub ahu_power_min: f64,
    pub ahu_power_max: f64,
    pub radiator_max: f64,
}

impl Default for BuildingParams {
    fn default() -> Self {
        BuildingParams {
            c_room: 2.0e5,
            c_env: 3.0e7,
            ua_room_env: 150.0,
            ua_room_amb: 5.0,
            ua_room_room: 15.0,
            ua_env_amb: 60.0,
            ua_env_ground: 30.0,
            c_p_air: 1005.0,
            floor_area: vec![15.0; BUILDING_ROOMS],
            solar_room: vec![1.0, 1.0, 0.5, 0.1, 0.1],
            solar_env: 3.0,
            ahu_share: vec![0.2; BUILDING_ROOMS],
            airflow_max: 1.0,
            ahu_power_min: 100.0,
            ahu_power_max: 1000.0,
            radiator_max: 25.0,
        }
    }
}

impl BuildingParams {
    pub fn validate(&self) -> Result<()> {
        let lens = [self.floor_area.len(), self.solar_room.len(), self.ahu_share.len()];
        if lens.iter().any(|&l| l != BUILDING_ROOMS) {
            return Err(FesError::Dimension(format!("building vectors need {BUILDING_ROOMS} rooms")));
        }
        let positive = [self.c_room, self.c_env, self.c_p_air, self.airflow_max, self.ahu_power_max, self.radiator_max];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(FesError::InvalidParameter("capacities and input ranges must be positive".into()));
        }
        let conductances = [self.ua_room_env, self.ua_room_amb, self.ua_room_room, self.ua_env_amb, self.ua_env_ground];
        if conductances.iter().any(|v| !(*v >= 0.0)) || !(self.ua_env_amb + self.ua_env_ground > 0.0) {
            return Err(FesError::InvalidParameter("conductances must be nonnegative with a path to the boundary".into()));
        }
        if !(self.ahu_power_min >= 0.0 && self.ahu_power_min <= self.ahu_power_max) {
            return Err(FesError::InvalidParameter("AHU power bounds".into()));
        }
        Ok(())
    }

    pub fn input_box(&self) -> BoxSet {
        let mut lo = vec![0.0, self.ahu_power_min, self.ahu_power_min];
        let mut hi = vec![self.airflow_max, self.ahu_power_max, self.ahu_power_max];
        lo.extend(std::iter::repeat_n(0.0, BUILDING_ROOMS));
        hi.extend(std::iter::repeat_n(self.radiator_max, BUILDING_ROOMS));
        BoxSet::new(Vector::from_vec(lo), Vector::from_vec(hi)).expect("bounds ordered by validation")
    }
}

#[derive(Debug, Clone)]
pub struct BuildingPlant {
    pub params: BuildingParams,
    /// Conductance part of the state matrix (airflow excluded).
    base: Matrix,
    t_fast: f64,
}

impl BuildingPlant {
    pub fn new(params: BuildingParams) -> Result<Self> {
        params.validate()?;
        let p = &params;
        let mut k = Matrix::zeros(NX, NX);
        let e = BUILDING_ROOMS;
        for i in 0..BUILDING_ROOMS {
            k[(i, i)] -= p.ua_room_env + p.ua_room_amb;
            k[(i, e)] += p.ua_room_env;
            k[(e, i)] += p.ua_room_env;
            k[(e, e)] -= p.ua_room_env;
            if i + 1 < BUILDING_ROOMS {
                k[(i, i)] -= p.ua_room_room;
                k[(i + 1, i + 1)] -= p.ua_room_room;
                k[(i, i + 1)] += p.ua_room_room;
                k[(i + 1, i)] += p.ua_room_room;
            }
        }
        k[(e, e)] -= p.ua_env_amb + p.ua_env_ground;
        let mut base = k;
        for i in 0..NX {
            let cap = if i < BUILDING_ROOMS { p.c_room } else { p.c_env };
            for j in 0..NX {
                base[(i, j)] /= cap;
            }
        }
        let mut plant = BuildingPlant { params, base, t_fast: 0.0 };
        let a_max = plant.state_matrix(plant.params.airflow_max);
        let rate = a_max.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max);
        plant.t_fast = 1.0 / rate;
        Ok(plant)
    }

    /// State matrix for air flow `m`.
    pub fn state_matrix(&self, m: f64) -> Matrix {
        let mut a = self.base.clone();
        for i in 0..BUILDING_ROOMS {
            a[(i, i)] -= self.params.ahu_share[i] * m * self.params.c_p_air / self.params.c_room;
        }
        a
    }

    /// Affine term so that `ẋ = A(m) x + b(u, w)`.
    pub fn forcing(&self, u: &Vector, w: &Vector) -> Vector {
        let p = &self.params;
        let (m, ph, pc) = (u[0], u[1], u[2]);
        let (t_amb, t_g, sol) = (w[0], w[1], w[2]);
        let mut b = Vector::zeros(NX);
        for i in 0..BUILDING_ROOMS {
            let q = p.ua_room_amb * t_amb
                + p.floor_area[i] * u[3 + i]
                + w[3 + i]
                + p.solar_room[i] * sol
                + p.ahu_share[i] * (m * p.c_p_air * t_amb + ph - pc);
            b[i] = q / p.c_room;
        }
        b[BUILDING_ROOMS] = (p.ua_env_amb * t_amb + p.ua_env_ground * t_g + p.solar_env * sol) / p.c_env;
        b
    }

    /// ∂p/∂u by implicit differentiation of `A(m) p + b(u, w) = 0`.
    pub fn state_sensitivity(&self, u: &Vector, w: &Vector) -> Matrix {
        let p = &self.params;
        let lu = LU::new(self.state_matrix(u[0]));
        let x = lu.solve(&(-self.forcing(u, w))).expect("building state matrix is nonsingular");
        let mut rhs = Matrix::zeros(NX, NU);
        for i in 0..BUILDING_ROOMS {
            let s = p.ahu_share[i] / p.c_room;
            rhs[(i, 0)] = -(-s * p.c_p_air * x[i] + s * p.c_p_air * w[0]);
            rhs[(i, 1)] = -s;
            rhs[(i, 2)] = s;
            rhs[(i, 3 + i)] = -p.floor_area[i] / p.c_room;
        }
        lu.solve(&rhs).expect("building state matrix is nonsingular")
    }

    /// Disturbance consistent with measured outputs `y` under input `u`:
    /// ambient and ground are read from `y`, solar is set to zero and the
    /// unmeasured gains are lumped per room so that the steady state
    /// reproduces the measured room temperatures.
    pub fn disturbance_estimate(&self, y: &Vector, u: &Vector) -> Vector {
        let p = &self.params;
        let (t_amb, t_g) = (y[BUILDING_ROOMS], y[BUILDING_ROOMS + 1]);
        let mut w = Vector::zeros(NW);
        w[0] = t_amb;
        w[1] = t_g;
        let rooms: f64 = y.rows(0, BUILDING_ROOMS).sum();
        let mut x = Vector::zeros(NX);
        x.rows_mut(0, BUILDING_ROOMS).copy_from(&y.rows(0, BUILDING_ROOMS));
        x[BUILDING_ROOMS] = (p.ua_room_env * rooms + p.ua_env_amb * t_amb + p.ua_env_ground * t_g)
            / (BUILDING_ROOMS as f64 * p.ua_room_env + p.ua_env_amb + p.ua_env_ground);
        let residual = self.state_matrix(u[0]) * &x + self.forcing(u, &w);
        for i in 0..BUILDING_ROOMS {
            w[3 + i] = -residual[i] * p.c_room;
        }
        w
    }
}

impl Plant for BuildingPlant {
    fn dims(&self) -> PlantDims {
        PlantDims { x: NX, u: NU, y: NY, w: NW }
    }

    fn f(&self, x: &Vector, u: &Vector, w: &Vector) -> Vector {
        self.state_matrix(u[0]) * x + self.forcing(u, w)
    }

    fn g(&self, x: &Vector, w: &Vector) -> Vector {
        let mut y = Vector::zeros(NY);
        y.rows_mut(0, BUILDING_ROOMS).copy_from(&x.rows(0, BUILDING_ROOMS));
        y[BUILDING_ROOMS] = w[0];
        y[BUILDING_ROOMS + 1] = w[1];
        y
    }

    fn p(&self, u: &Vector, w: &Vector) -> Vector {
        LU::new(self.state_matrix(u[0])).solve(&(-self.forcing(u, w))).expect("building state matrix is nonsingular")
    }

    fn h_sensitivity(&self, u: &Vector, w: &Vector) -> Matrix {
        let dp = self.state_sensitivity(u, w);
        let mut out = Matrix::zeros(NY, NU);
        out.view_mut((0, 0), (BUILDING_ROOMS, NU)).copy_from(&dp.rows(0, BUILDING_ROOMS));
        out
    }

    fn fastest_time_constant(&self) -> f64 {
        self.t_fast
    }

    fn output_lipschitz(&self) -> f64 {
        1.0
    }
}
