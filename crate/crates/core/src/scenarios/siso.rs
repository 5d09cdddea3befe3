use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AssertionResult, ScenarioRun};
use crate::algorithms::{Algorithm, Controller, ProxGrad, StepSchedule};
use crate::analysis::{estimate_gain, lyapunov_input_gain, CertificateParts, LabeledConstant, StabilityCertificate};
use crate::closed_loop::{run as run_loop, tracking_report, LoopConfig, ReportOptions};
use crate::error::{FesError, Result};
use crate::ge_core::SolutionOracle;
use crate::linalg::{Matrix, Vector};
use crate::operators::BoxSet;
use crate::plant::{build_siso_plant, DisturbanceSignal, LtiPlant, Plant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Vanishing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SisoExpectation {
    /// Terminal tracking error below `converge_tol`.
    Converge,
    Diverge,
    /// Error at the horizon exceeds `growth_ratio` times its value at 25 % of the horizon.
    ErrorGrowth,
    /// Post-burn-in sup|e| within `bounded_ratio` of its median.
    Bounded,
    None,
}

/// Set-point regulation of `ξ̈ + 0.5ξ̇ + ξ = u + w` with a projected-gradient controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SisoConfig {
    pub seed: u64,
    pub tau: f64,
    pub horizon: f64,
    pub gamma: f64,
    pub schedule: ScheduleKind,
    pub y_ref: f64,
    /// Input box `[−u_bound, u_bound]`.
    pub u_bound: f64,
    /// Disturbance `w(t) = ramp_slope · t`.
    pub ramp_slope: f64,
    pub substeps: Option<usize>,
    pub expect: SisoExpectation,
    pub converge_tol: f64,
    pub growth_ratio: f64,
    pub bounded_ratio: f64,
    pub burn_in_fraction: f64,
    /// Radius of the plant-state region used for the Lyapunov input gain.
    pub state_radius: f64,
}

impl Default for SisoConfig {
    fn default() -> Self {
        SisoConfig {
            seed: 0,
            tau: 8.0,
            horizon: 400.0,
            gamma: 0.8,
            schedule: ScheduleKind::Constant,
            y_ref: 1.0,
            u_bound: 10.0,
            ramp_slope: 0.0,
            substeps: None,
            expect: SisoExpectation::Converge,
            converge_tol: 1e-3,
            growth_ratio: 5.0,
            bounded_ratio: 2.0,
            burn_in_fraction: 0.5,
            state_radius: 10.0,
        }
    }
}

impl SisoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(FesError::Config(format!("gamma = {} outside (0, 1]", self.gamma)));
        }
        if !(self.tau > 0.0) || !(self.horizon >= self.tau) {
            return Err(FesError::Config("need tau > 0 and horizon ≥ tau".into()));
        }
        if !(self.u_bound > 0.0) || !(self.state_radius > 0.0) {
            return Err(FesError::Config("u_bound and state_radius must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(FesError::Config("burn_in_fraction must lie in [0, 1)".into()));
        }
        if self.substeps == Some(0) {
            return Err(FesError::Config("substeps must be at least 1".into()));
        }
        Ok(())
    }

    fn disturbance(&self) -> DisturbanceSignal {
        if self.ramp_slope == 0.0 {
            DisturbanceSignal::constant(&[0.0])
        } else {
            DisturbanceSignal::Ramp { offset: vec![0.0], slope: vec![self.ramp_slope] }
        }
    }

    fn controller(&self) -> Result<ProxGrad> {
        let schedule = match self.schedule {
            ScheduleKind::Constant => StepSchedule::Constant,
            ScheduleKind::Vanishing => StepSchedule::Vanishing { gamma0: self.gamma },
        };
        let set = BoxSet::uniform(1, -self.u_bound, self.u_bound)?;
        ProxGrad::new(Vector::from_element(1, self.y_ref), self.gamma, schedule, set)
    }
}

/// Plant, controller, disturbance and loop configuration of the pack.
pub fn scenario_siso(cfg: &SisoConfig) -> Result<(LtiPlant, Controller, DisturbanceSignal, LoopConfig)> {
    cfg.validate()?;
    let plant = build_siso_plant();
    let alg = cfg.controller()?;
    // z* solves z = proj(z − γ(h(z, w) − y_ref)) with h(u, w) = u + w
    let oracle_alg = alg.clone();
    let oracle_plant = plant.clone();
    let gamma = cfg.gamma;
    let oracle = SolutionOracle {
        condensed_map: Arc::new(move |z: &Vector, w: &Vector| {
            let y = oracle_plant.h(z, w);
            Vector::from_fn(1, |i, _| {
                crate::algorithms::prox_grad_step(z[i], y[i], oracle_alg.y_ref[i], gamma, oracle_alg.set.lower[i], oracle_alg.set.upper[i])
            })
        }),
        tol: 1e-13,
        max_iter: 10_000,
    };
    let z0 = Vector::zeros(1);
    let ctrl = Controller::new(Arc::new(alg), z0.clone())?;
    let mut loop_cfg = LoopConfig::new(cfg.tau, cfg.horizon, Vector::zeros(2), z0);
    loop_cfg.substeps = cfg.substeps;
    loop_cfg.oracle = Some(oracle);
    Ok((plant, ctrl, cfg.disturbance(), loop_cfg))
}

pub(super) fn run(cfg: &SisoConfig) -> Result<ScenarioRun> {
    let (plant, mut ctrl, w, loop_cfg) = scenario_siso(cfg)?;
    let trace = run_loop(&plant, &mut ctrl, &w, &loop_cfg)?;
    let opts = ReportOptions { burn_in_fraction: cfg.burn_in_fraction, converge_tol: cfg.converge_tol, ..Default::default() };
    let summary = tracking_report(&trace, &ctrl, &opts)?;

    let e = trace.e_series();
    let k_quarter = ((e.len() - 1) as f64 * 0.25).round() as usize;
    let e_quarter = e[k_quarter.min(e.len() - 1)];
    let mut metrics = BTreeMap::new();
    metrics.insert("e_at_quarter".into(), e_quarter);
    metrics.insert("e_terminal".into(), summary.terminal_e);
    metrics.insert("growth_ratio".into(), summary.terminal_e / e_quarter);
    metrics.insert("sup_over_median".into(), summary.sup_e_after_burn_in / summary.median_e_after_burn_in);

    let assertion = match cfg.expect {
        SisoExpectation::Converge => Some(AssertionResult::new(
            "converges",
            summary.converged,
            format!("diverged={} terminal |e|={:.3e} (tol {:.1e})", summary.diverged, summary.terminal_e, cfg.converge_tol),
        )),
        SisoExpectation::Diverge => Some(AssertionResult::new(
            "diverges",
            summary.diverged,
            format!("post-burn-in sup|e|={:.3e}, blow-up {:?}", summary.sup_e_after_burn_in, summary.blow_up_time),
        )),
        SisoExpectation::ErrorGrowth => {
            let ratio = summary.terminal_e / e_quarter;
            Some(AssertionResult::new(
                "error_grows",
                ratio > cfg.growth_ratio,
                format!("|e(H)|/|e(H/4)| = {ratio:.3} (needs > {})", cfg.growth_ratio),
            ))
        }
        SisoExpectation::Bounded => {
            let ratio = summary.sup_e_after_burn_in / summary.median_e_after_burn_in;
            Some(AssertionResult::new(
                "bounded",
                !summary.diverged && ratio.is_finite() && ratio <= cfg.bounded_ratio,
                format!("sup/median = {ratio:.3} (needs ≤ {}), diverged={}", cfg.bounded_ratio, summary.diverged),
            ))
        }
        SisoExpectation::None => None,
    };
    Ok(ScenarioRun {
        name: "siso".into(),
        trace,
        summary,
        metrics,
        assertions: assertion.into_iter().collect(),
        baseline: None,
    })
}

/// Closed-form constants: `L_T = γ`, `L_z = L_q = 1`, `L_g = |C|`,
/// `η = √(1 − γ(2 − γ))`, identity metric.
pub fn siso_certificate(cfg: &SisoConfig) -> Result<StabilityCertificate> {
    let plant = build_siso_plant();
    let alg = cfg.controller()?;
    let lti = plant.lti().expect("SISO plant is LTI");
    let parts = CertificateParts {
        lyapunov: lti.lyapunov.clone(),
        l_v: LabeledConstant::analytic(lyapunov_input_gain(&lti.lyapunov.p, &lti.dp_du, cfg.state_radius)),
        l_z: LabeledConstant::analytic(1.0),
        l_t: LabeledConstant::analytic(alg.output_lipschitz().expect("prox-grad has an analytic L_T")),
        l_g: LabeledConstant::analytic(plant.output_lipschitz()),
        l_q: LabeledConstant::analytic(alg.input_lipschitz()),
        eta: alg.rate(),
        metric: Matrix::identity(1, 1),
    };
    StabilityCertificate::from_parts(&parts)
}

pub(super) fn empirical_gains(cfg: &SisoConfig) -> Result<BTreeMap<String, f64>> {
    let alg = cfg.controller()?;
    let z = Vector::from_element(1, 0.3);
    let l_t = estimate_gain(|s| alg.step(&z, s, 0).expect("prox-grad step"), &Vector::from_element(1, cfg.y_ref), 5.0, 200, cfg.seed);
    let y_ref = cfg.y_ref;
    let bound = cfg.u_bound;
    let l_z = estimate_gain(|w| w.map(|wi| (y_ref - wi).clamp(-bound, bound)), &Vector::zeros(1), 5.0, 200, cfg.seed.wrapping_add(1));
    Ok(BTreeMap::from([("l_t".to_string(), l_t.max_ratio), ("l_z".to_string(), l_z.max_ratio)]))
}
