use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AssertionResult, CertificateMode, CertificateReport, ScenarioRun};
use crate::algorithms::{Algorithm, Controller, ControllerKind, SqpBuilding};
use crate::analysis::estimate_gain;
use crate::closed_loop::{run as run_loop, tracking_report, ClosedLoopTrace, LoopConfig, ReportOptions};
use crate::error::{FesError, Result};
use crate::ge_core::{KktNlpProblem, NonsmoothTerm, SolutionOracle};
use crate::linalg::{concat, Matrix, Vector};
use crate::operators::ConvexSet;
use crate::plant::{BuildingParams, BuildingPlant, DisturbanceSignal, Plant, BUILDING_ROOMS};

const DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildingPrices {
    /// Per kg/s of air flow.
    pub fan: f64,
    /// Per W of AHU heating or cooling power.
    pub electric: f64,
    /// Per W/m² of radiator output.
    pub radiator: f64,
}

impl Default for BuildingPrices {
    fn default() -> Self {
        BuildingPrices { fan: 200.0, electric: 1.0, radiator: 15.0 }
    }
}

/// Five-room thermal surrogate, SQP controller versus a thermostat.
/// Time is in seconds, temperatures in °C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildingConfig {
    pub seed: u64,
    pub tau: f64,
    pub horizon_days: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub eta: f64,
    pub eps: f64,
    pub prices: BuildingPrices,
    /// Thermostat switching offset from the comfort midpoint.
    pub hysteresis_band: f64,
    pub occupants: usize,
    pub occupant_gain: f64,
    pub occupancy_step: f64,
    pub ambient_mean: f64,
    pub ambient_amplitude: f64,
    pub ground: f64,
    pub solar_peak: f64,
    /// Spacing of the disturbance table.
    pub table_step: f64,
    pub initial_room: f64,
    pub initial_envelope: f64,
    /// Evaluate the per-sample equilibrium reference (costly; diagnostics only).
    pub reference: bool,
    pub substeps: Option<usize>,
    pub params: BuildingParams,
}

impl Default for BuildingConfig {
    fn default() -> Self {
        BuildingConfig {
            seed: 11,
            tau: 180.0,
            horizon_days: 3.0,
            t_min: 21.0,
            t_max: 24.0,
            eta: 5e4,
            eps: 1e-5,
            prices: BuildingPrices::default(),
            hysteresis_band: 2.0,
            occupants: 15,
            occupant_gain: 100.0,
            occupancy_step: 900.0,
            ambient_mean: 11.0,
            ambient_amplitude: 6.0,
            ground: 10.0,
            solar_peak: 600.0,
            table_step: 60.0,
            initial_room: 22.0,
            initial_envelope: 19.0,
            reference: true,
            substeps: None,
            params: BuildingParams::default(),
        }
    }
}

impl BuildingConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.tau > 0.0) || !(self.horizon_days * DAY >= self.tau) {
            return Err(FesError::Config("need tau > 0 and a horizon of at least one sample".into()));
        }
        if !(self.t_min < self.t_max) {
            return Err(FesError::Config("comfort band needs t_min < t_max".into()));
        }
        if !(self.eta > 0.0) || !(self.eps > 0.0) {
            return Err(FesError::Config("eta and eps must be positive".into()));
        }
        if !(self.table_step > 0.0) || !(self.occupancy_step > 0.0) || !(self.hysteresis_band > 0.0) {
            return Err(FesError::Config("table_step, occupancy_step and hysteresis_band must be positive".into()));
        }
        if self.substeps == Some(0) {
            return Err(FesError::Config("substeps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon_days * DAY
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.t_min + self.t_max)
    }

    /// Price vector ordered like the inputs `(ṁ, P_heat, P_cool, r_1..r_5)`.
    pub fn price_vector(&self) -> Vector {
        let mut c = vec![self.prices.fan, self.prices.electric, self.prices.electric];
        c.extend(std::iter::repeat_n(self.prices.radiator, BUILDING_ROOMS));
        Vector::from_vec(c)
    }
}

/// Sampled weather and occupancy. Ambient temperature peaks at 15:00, sun
/// shines from 06:00 to 18:00; occupants move by a seeded Markov chain.
pub fn building_disturbance(cfg: &BuildingConfig) -> DisturbanceSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let horizon = cfg.horizon();
    // occupant location: None = outside, Some(room)
    let mut location: Vec<Option<usize>> = vec![None; cfg.occupants];
    let n_occ_steps = (horizon / cfg.occupancy_step).ceil() as usize + 1;
    let mut occupancy = Vec::with_capacity(n_occ_steps);
    for step in 0..n_occ_steps {
        let hour = (step as f64 * cfg.occupancy_step % DAY) / 3600.0;
        let working = (8.0..18.0).contains(&hour);
        let (p_in, p_out) = if working { (0.3, 0.05) } else { (0.02, 0.5) };
        for loc in location.iter_mut() {
            let r: f64 = rng.gen();
            *loc = match *loc {
                None if r < p_in => Some(rng.gen_range(0..BUILDING_ROOMS)),
                None => None,
                Some(_) if r < p_out => None,
                Some(room) if r < p_out + 0.1 => Some((room + rng.gen_range(1..BUILDING_ROOMS)) % BUILDING_ROOMS),
                Some(room) => Some(room),
            };
        }
        let mut q = vec![0.0; BUILDING_ROOMS];
        for room in location.iter().flatten() {
            q[*room] += cfg.occupant_gain;
        }
        occupancy.push(q);
    }
    let n = (horizon / cfg.table_step).ceil() as usize + 1;
    let mut times = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * cfg.table_step;
        let amb = cfg.ambient_mean + cfg.ambient_amplitude * (2.0 * PI * (t - 9.0 * 3600.0) / DAY).sin();
        let sol = cfg.solar_peak * (2.0 * PI * (t - 6.0 * 3600.0) / DAY).sin().max(0.0);
        let occ = &occupancy[((t / cfg.occupancy_step).floor() as usize).min(n_occ_steps - 1)];
        let mut row = vec![amb, cfg.ground, sol];
        row.extend_from_slice(occ);
        times.push(t);
        values.push(row);
    }
    DisturbanceSignal::Table { times, values }
}

/// Composite NLP `ε/2|(ξ,u)|² + cᵀu + η/2 Σ comfort violation` on the
/// surrogate; unmeasured solar and occupancy gains are estimated as zero.
pub fn building_nlp(cfg: &BuildingConfig, plant: &BuildingPlant) -> KktNlpProblem {
    let n_y = BUILDING_ROOMS + 2;
    let n_u = BUILDING_ROOMS + 3;
    let c = cfg.price_vector();
    let eps = cfg.eps;
    let c_grad = c.clone();
    let ph = plant.clone();
    let ps = plant.clone();
    let pw = plant.clone();
    KktNlpProblem {
        n_y,
        n_u,
        phi: Arc::new(move |xi: &Vector, u: &Vector| 0.5 * eps * (xi.norm_squared() + u.norm_squared()) + c.dot(u)),
        phi_grad: Arc::new(move |xi: &Vector, u: &Vector| (xi * eps, u * eps + &c_grad)),
        phi_hess: Arc::new(move |_xi: &Vector, _u: &Vector| Matrix::identity(n_y + n_u, n_y + n_u) * eps),
        varphi: NonsmoothTerm::Hinge {
            indices: (0..BUILDING_ROOMS).collect(),
            lower: vec![cfg.t_min; BUILDING_ROOMS],
            upper: vec![cfg.t_max; BUILDING_ROOMS],
            weight: 0.5 * cfg.eta,
        },
        u_set: ConvexSet::Box(plant.params.input_box()),
        h: Arc::new(move |u: &Vector, w: &Vector| ph.h(u, w)),
        h_sensitivity: Arc::new(move |u: &Vector, w: &Vector| ps.h_sensitivity(u, w)),
        h_curvature: None,
        w_estimate: Arc::new(move |s: &Vector, u: &Vector| pw.disturbance_estimate(s, u)),
    }
}

/// Inputs commanded by thermostat flags `(heat_1..5, cool_1..5)`.
pub fn hysteresis_inputs(flags: &Vector, p: &BuildingParams) -> Vector {
    let heat = (0..BUILDING_ROOMS).any(|i| flags[i] > 0.5);
    let cool = (0..BUILDING_ROOMS).any(|i| flags[BUILDING_ROOMS + i] > 0.5);
    let mut u = Vector::zeros(3 + BUILDING_ROOMS);
    u[0] = if cool { p.airflow_max } else { 0.0 };
    u[1] = if heat { p.ahu_power_max } else { p.ahu_power_min };
    u[2] = if cool { p.ahu_power_max } else { p.ahu_power_min };
    for i in 0..BUILDING_ROOMS {
        u[3 + i] = if flags[i] > 0.5 { p.radiator_max } else { 0.0 };
    }
    u
}

/// Per-room thermostat: heating switches on at `mid − band` and off at
/// `mid`; cooling on at `mid + band` and off at `mid`.
#[derive(Debug, Clone)]
pub struct HysteresisPolicy {
    pub params: BuildingParams,
    pub midpoint: f64,
    pub band: f64,
}

impl Algorithm for HysteresisPolicy {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Hysteresis
    }
    fn dim_z(&self) -> usize {
        2 * BUILDING_ROOMS
    }
    fn input(&self, z: &Vector) -> Vector {
        hysteresis_inputs(z, &self.params)
    }
    fn step(&self, z: &Vector, s: &Vector, _k: usize) -> Result<Vector> {
        let mut next = z.clone();
        for i in 0..BUILDING_ROOMS {
            let t = s[i];
            if t <= self.midpoint - self.band {
                next[i] = 1.0;
            } else if t >= self.midpoint {
                next[i] = 0.0;
            }
            let j = BUILDING_ROOMS + i;
            if t >= self.midpoint + self.band {
                next[j] = 1.0;
            } else if t <= self.midpoint {
                next[j] = 0.0;
            }
        }
        Ok(next)
    }
    fn input_set(&self) -> Option<ConvexSet> {
        Some(ConvexSet::Box(self.params.input_box()))
    }
}

/// `∫ cost` and `∫ Σ violation` over the substep rows of a trace.
pub(crate) fn integrate_cost(trace: &ClosedLoopTrace, cfg: &BuildingConfig) -> (f64, f64) {
    let c = cfg.price_vector();
    let mut cost = 0.0;
    let mut viol = 0.0;
    for (i, d) in trace.dense.iter().enumerate() {
        let h = match trace.dense.get(i + 1) {
            Some(next) => next.t - d.t,
            None => trace.dense.get(1).map_or(0.0, |d1| d1.t - trace.dense[0].t),
        };
        let v: f64 = (0..BUILDING_ROOMS).map(|r| (cfg.t_min - d.y[r]).max(d.y[r] - cfg.t_max).max(0.0)).sum();
        let stage = 0.5 * cfg.eps * (d.y.norm_squared() + d.u.norm_squared()) + c.dot(&d.u) + 0.5 * cfg.eta * v;
        cost += stage * h;
        viol += v * h;
    }
    (cost, viol)
}

struct Setup {
    plant: BuildingPlant,
    sqp: SqpBuilding,
    disturbance: DisturbanceSignal,
    x0: Vector,
}

fn setup(cfg: &BuildingConfig) -> Result<Setup> {
    cfg.validate()?;
    let plant = BuildingPlant::new(cfg.params.clone())?;
    let nlp = building_nlp(cfg, &plant);
    let sqp = SqpBuilding::new(nlp, cfg.price_vector(), cfg.eta, cfg.eps)?;
    let disturbance = building_disturbance(cfg);
    let mut x0 = Vector::from_element(BUILDING_ROOMS + 1, cfg.initial_room);
    x0[BUILDING_ROOMS] = cfg.initial_envelope;
    Ok(Setup { plant, sqp, disturbance, x0 })
}

pub(super) fn run(cfg: &BuildingConfig) -> Result<ScenarioRun> {
    let Setup { plant, sqp, disturbance, x0 } = setup(cfg)?;
    let w0 = disturbance.value(0.0);
    let y0 = plant.g(&x0, &w0);
    let u0 = cfg.params.input_box().lower;
    let z0 = concat(&[&y0, &u0, &Vector::zeros(BUILDING_ROOMS + 2)]);

    let mut loop_cfg = LoopConfig::new(cfg.tau, cfg.horizon(), x0.clone(), z0.clone());
    loop_cfg.substeps = cfg.substeps;
    if cfg.reference {
        let oracle_sqp = sqp.clone();
        let oracle_plant = plant.clone();
        loop_cfg.oracle = Some(SolutionOracle {
            condensed_map: Arc::new(move |z: &Vector, w: &Vector| {
                let s = oracle_plant.h(&oracle_sqp.input(z), w);
                oracle_sqp.sqp_building_step(z, &s).unwrap_or_else(|_| Vector::from_element(z.len(), f64::NAN))
            }),
            tol: 1e-6,
            max_iter: 100,
        });
    }
    let mut ctrl = Controller::new(Arc::new(sqp), z0)?;
    let trace = run_loop(&plant, &mut ctrl, &disturbance, &loop_cfg)?;
    let summary = tracking_report(&trace, &ctrl, &ReportOptions::default())?;

    let policy = HysteresisPolicy { params: cfg.params.clone(), midpoint: cfg.midpoint(), band: cfg.hysteresis_band };
    let flags0 = Vector::zeros(2 * BUILDING_ROOMS);
    let mut base_cfg = LoopConfig::new(cfg.tau, cfg.horizon(), x0, flags0.clone());
    base_cfg.substeps = cfg.substeps;
    let mut base_ctrl = Controller::new(Arc::new(policy), flags0)?;
    let baseline = run_loop(&plant, &mut base_ctrl, &disturbance, &base_cfg)?;

    let (sqp_cost, sqp_viol) = integrate_cost(&trace, cfg);
    let (hyst_cost, hyst_viol) = integrate_cost(&baseline, cfg);
    let mut metrics = BTreeMap::new();
    metrics.insert("sqp_cost".into(), sqp_cost);
    metrics.insert("sqp_violation".into(), sqp_viol);
    metrics.insert("hysteresis_cost".into(), hyst_cost);
    metrics.insert("hysteresis_violation".into(), hyst_viol);
    metrics.insert("cost_reduction".into(), 1.0 - sqp_cost / hyst_cost);
    metrics.insert("violation_reduction".into(), 1.0 - sqp_viol / hyst_viol);
    metrics.insert("oracle_failures".into(), trace.oracle_failures as f64);

    let complete = trace.failure.is_none() && trace.blow_up.is_none() && trace.samples.len() == loop_cfg.n_intervals() + 1;
    let assertions = vec![
        AssertionResult::new("qp_always_feasible", complete, format!("failure={:?}", trace.failure)),
        // costs of a truncated run are not comparable
        AssertionResult::new("lower_cost", complete && sqp_cost < hyst_cost, format!("SQP {sqp_cost:.6e} vs thermostat {hyst_cost:.6e}")),
        AssertionResult::new("lower_violation", complete && sqp_viol < hyst_viol, format!("SQP {sqp_viol:.6e} vs thermostat {hyst_viol:.6e} K·s")),
    ];
    Ok(ScenarioRun { name: "building".into(), trace, summary, metrics, assertions, baseline: Some(baseline) })
}

pub(super) fn certify(cfg: &BuildingConfig) -> Result<CertificateReport> {
    let Setup { plant, sqp, disturbance, x0 } = setup(cfg)?;
    let w = disturbance.value(0.0);
    let y = plant.g(&x0, &w);
    let u = cfg.params.input_box().lower;
    let z = concat(&[&y, &u, &Vector::zeros(BUILDING_ROOMS + 2)]);
    let est = estimate_gain(|s| sqp.sqp_building_step(&z, s).unwrap_or_else(|_| Vector::from_element(z.len(), f64::NAN)), &y, 1.0, 100, cfg.seed);
    let mut empirical = BTreeMap::new();
    empirical.insert("l_t".into(), est.max_ratio);
    Ok(CertificateReport { scenario: "building".into(), mode: CertificateMode::EmpiricalOnly, certificate: None, empirical })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy() -> HysteresisPolicy {
        HysteresisPolicy { params: BuildingParams::default(), midpoint: 22.5, band: 2.0 }
    }

    fn temps(t: f64) -> Vector {
        let mut s = Vector::from_element(BUILDING_ROOMS + 2, t);
        s[BUILDING_ROOMS] = 10.0;
        s
    }

    #[test]
    fn thermostat_heats_three_below_midpoint() {
        let z = policy().step(&Vector::zeros(10), &temps(19.5), 0).unwrap();
        let u = policy().input(&z);
        assert_eq!(u[1], 1000.0);
        assert!((3..8).all(|i| u[i] == 25.0));
        assert_eq!(u[0], 0.0);
    }

    #[test]
    fn thermostat_idle_at_midpoint() {
        let p = policy();
        let on = Vector::from_element(10, 1.0);
        let z = p.step(&on, &temps(22.5), 0).unwrap();
        assert_eq!(z, Vector::zeros(10));
        let u = p.input(&z);
        assert_eq!((u[0], u[1], u[2]), (0.0, 100.0, 100.0));
    }

    #[test]
    fn thermostat_keeps_state_inside_band() {
        let p = policy();
        let mut z = Vector::zeros(10);
        z[0] = 1.0;
        assert_eq!(p.step(&z, &temps(21.5), 0).unwrap()[0], 1.0);
        assert_eq!(p.step(&Vector::zeros(10), &temps(21.5), 0).unwrap()[0], 0.0);
    }

    #[test]
    fn disturbance_is_reproducible() {
        let cfg = BuildingConfig::default();
        assert_eq!(building_disturbance(&cfg), building_disturbance(&cfg));
        let w = building_disturbance(&cfg).value(12.0 * 3600.0);
        assert!((w[2] - 600.0).abs() < 1e-6);
    }
}
