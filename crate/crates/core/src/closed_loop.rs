//! Sampled-data interconnection: integrate with held input, measure,
//! update the controller, apply the new input.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::algorithms::Controller;
use crate::error::{FesError, Result};
use crate::ge_core::{solve_oracle, SolutionOracle};
use crate::linalg::{all_finite, p_norm, Matrix, Vector};
use crate::plant::{default_substeps, integrate_hold, DensePoint, DisturbanceSignal, Plant};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub tau: f64,
    pub horizon: f64,
    pub x0: Vector,
    pub z0: Vector,
    /// `None` selects the default substep rule.
    pub substeps: Option<usize>,
    pub oracle: Option<SolutionOracle>,
    pub blow_up_threshold: f64,
    pub record_dense: bool,
}

impl LoopConfig {
    pub fn new(tau: f64, horizon: f64, x0: Vector, z0: Vector) -> Self {
        LoopConfig { tau, horizon, x0, z0, substeps: None, oracle: None, blow_up_threshold: 1e9, record_dense: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(FesError::InvalidParameter("sampling period must be positive".into()));
        }
        if !(self.horizon >= self.tau) {
            return Err(FesError::InvalidParameter("horizon must cover at least one sample".into()));
        }
        if self.substeps == Some(0) {
            return Err(FesError::InvalidParameter("substeps must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of sampling intervals.
    pub fn n_intervals(&self) -> usize {
        (self.horizon / self.tau + 1e-9).floor() as usize
    }
}

/// Everything known at sample `t^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub k: usize,
    pub t: f64,
    pub x: Vector,
    pub y: Vector,
    pub z: Vector,
    pub u: Vector,
    /// Oracle reference; NaN entries when the oracle failed or none was given.
    pub z_star: Vector,
    pub e_norm: f64,
    /// Merit `|z − z*|` in the controller metric.
    pub merit: f64,
    /// `½|x − p(u, w)|²_P` for plants with a Lyapunov certificate.
    pub lyapunov: Option<f64>,
    /// `|u^k − u^{k−1}|` (zero at k = 0).
    pub du_norm: f64,
    /// esssup |ẇ| over `[t^k, t^{k+1}]`; infinite across jumps.
    pub d_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub k: usize,
    pub t: f64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopTrace {
    pub tau: f64,
    pub samples: Vec<SampleRecord>,
    pub dense: Vec<DensePoint>,
    /// Blow-up time when a state crossed the divergence threshold.
    pub blow_up: Option<f64>,
    pub failure: Option<FailureRecord>,
    pub oracle_failures: usize,
}

impl ClosedLoopTrace {
    pub fn e_series(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.e_norm).collect()
    }
}

fn nan_vector(n: usize) -> Vector {
    Vector::from_element(n, f64::NAN)
}

/// Runs the loop. Controller faults and blow-ups end the run early and are
/// reported in the returned trace; only inconsistent inputs are errors.
pub fn run(plant: &dyn Plant, controller: &mut Controller, w: &DisturbanceSignal, config: &LoopConfig) -> Result<ClosedLoopTrace> {
    config.validate()?;
    let dims = plant.dims();
    if config.x0.len() != dims.x {
        return Err(FesError::Dimension(format!("x0 has length {}, plant state {}", config.x0.len(), dims.x)));
    }
    if w.dim() != dims.w {
        return Err(FesError::Dimension(format!("disturbance has dimension {}, plant expects {}", w.dim(), dims.w)));
    }
    w.validate()?;
    controller.state_z = config.z0.clone();
    controller.k = 0;
    if config.z0.len() != controller.algorithm.dim_z() {
        return Err(FesError::Dimension("z0 does not match the controller".into()));
    }
    if controller.input().len() != dims.u {
        return Err(FesError::Dimension("controller input does not match the plant".into()));
    }

    let substeps = config.substeps.unwrap_or_else(|| default_substeps(plant, config.tau));
    let metric: Matrix = controller.algorithm.metric();
    let lyap = plant.lti().map(|s| s.lyapunov.p.clone());
    let n_z = config.z0.len();
    let k_max = config.n_intervals();

    let mut trace = ClosedLoopTrace {
        tau: config.tau,
        samples: Vec::with_capacity(k_max + 1),
        dense: Vec::new(),
        blow_up: None,
        failure: None,
        oracle_failures: 0,
    };
    let mut x = config.x0.clone();
    let mut z_star_prev = config.z0.clone();
    let mut u_prev: Option<Vector> = None;
    let mut y = plant.g(&x, &w.value(0.0));

    for k in 0..=k_max {
        let t = k as f64 * config.tau;
        let wt = w.value(t);
        let z = controller.state_z.clone();
        let u = controller.input();

        let z_star = match &config.oracle {
            Some(oracle) => match solve_oracle(oracle, &wt, &z_star_prev) {
                Ok(zs) => {
                    z_star_prev = zs.clone();
                    zs
                }
                Err(_) => {
                    trace.oracle_failures += 1;
                    nan_vector(n_z)
                }
            },
            None => nan_vector(n_z),
        };
        let e = &z - &z_star;
        let lyapunov = lyap.as_ref().map(|p| 0.5 * p_norm(&(&x - plant.p(&u, &wt)), p).powi(2));
        let du_norm = u_prev.as_ref().map_or(0.0, |up| (&u - up).norm());
        trace.samples.push(SampleRecord {
            k,
            t,
            x: x.clone(),
            y: y.clone(),
            z: z.clone(),
            u: u.clone(),
            z_star,
            e_norm: e.norm(),
            merit: p_norm(&e, &metric),
            lyapunov,
            du_norm,
            d_rate: w.interval_rate(t, t + config.tau),
        });
        u_prev = Some(u.clone());
        if k == k_max {
            break;
        }

        let hold = integrate_hold(plant, &x, &u, w, t, config.tau, substeps, config.record_dense, config.blow_up_threshold)?;
        trace.dense.extend(hold.dense);
        if let Some(tb) = hold.blow_up {
            trace.blow_up = Some(tb);
            break;
        }
        x = hold.x_end;
        let t_next = (k + 1) as f64 * config.tau;
        y = plant.g(&x, &w.value(t_next));
        if let Err(err) = controller.step(&y) {
            trace.failure = Some(FailureRecord { k: k + 1, t: t_next, message: err.to_string() });
            break;
        }
        if controller.state_z.iter().any(|v| v.abs() > config.blow_up_threshold) {
            trace.blow_up = Some(t_next);
            break;
        }
    }
    Ok(trace)
}

/// Deterministic aggregate of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub schema_version: u32,
    pub samples: usize,
    pub burn_in_fraction: f64,
    pub initial_e: f64,
    pub sup_e_after_burn_in: f64,
    pub median_e_after_burn_in: f64,
    pub terminal_e: f64,
    pub sup_v: Option<f64>,
    /// Samples with `W^{k+1} > W^k + 1e-10`.
    pub merit_increases: usize,
    /// ∫ dist-violation of the held input from the controller's input set.
    pub input_violation_integral: f64,
    pub diverged: bool,
    pub blow_up_time: Option<f64>,
    pub converged: bool,
    pub oracle_failures: usize,
    pub failure: Option<FailureRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub burn_in_fraction: f64,
    /// Terminal error below which a run counts as converged.
    pub converge_tol: f64,
    /// Growth factor of the divergence rule.
    pub divergence_factor: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { burn_in_fraction: 0.5, converge_tol: 1e-3, divergence_factor: 2.0 }
    }
}

fn finite_max(vals: impl Iterator<Item = f64>) -> f64 {
    vals.filter(|v| v.is_finite()).fold(f64::NAN, |a, v| if a.is_nan() { v } else { a.max(v) })
}

fn median(mut vals: Vec<f64>) -> f64 {
    vals.retain(|v| v.is_finite());
    if vals.is_empty() {
        return f64::NAN;
    }
    vals.sort_by(f64::total_cmp);
    let n = vals.len();
    if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    }
}

/// A run diverges if a state blew up, or if the tracking error after
/// burn-in exceeds `factor · max(|e⁰|, 1)`.
pub fn tracking_report(trace: &ClosedLoopTrace, controller: &Controller, opts: &ReportOptions) -> Result<TrackingSummary> {
    if trace.samples.is_empty() {
        return Err(FesError::InvalidParameter("empty trace".into()));
    }
    let n = trace.samples.len();
    let start = ((n as f64) * opts.burn_in_fraction).floor() as usize;
    let tail = &trace.samples[start.min(n - 1)..];
    let initial_e = trace.samples[0].e_norm;
    let sup_e = finite_max(tail.iter().map(|s| s.e_norm));
    let terminal_e = trace.samples.iter().rev().map(|s| s.e_norm).find(|v| v.is_finite()).unwrap_or(f64::NAN);
    let sup_v = if trace.samples.iter().any(|s| s.lyapunov.is_some()) {
        Some(finite_max(trace.samples.iter().filter_map(|s| s.lyapunov)))
    } else {
        None
    };
    let merit_increases = trace.samples.windows(2).filter(|p| p[1].merit > p[0].merit + 1e-10).count();
    let input_violation_integral = match controller.algorithm.input_set() {
        Some(set) => trace.samples.iter().map(|s| set.violation(&s.u)).sum::<f64>() * trace.tau,
        None => 0.0,
    };
    let growth = initial_e.abs().max(1.0) * opts.divergence_factor;
    let diverged = trace.blow_up.is_some() || (sup_e.is_finite() && sup_e > growth);
    let converged = !diverged && trace.failure.is_none() && terminal_e.is_finite() && terminal_e <= opts.converge_tol;
    Ok(TrackingSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        samples: n,
        burn_in_fraction: opts.burn_in_fraction,
        initial_e,
        sup_e_after_burn_in: sup_e,
        median_e_after_burn_in: median(tail.iter().map(|s| s.e_norm).collect()),
        terminal_e,
        sup_v,
        merit_increases,
        input_violation_integral,
        diverged,
        blow_up_time: trace.blow_up,
        converged,
        oracle_failures: trace.oracle_failures,
        failure: trace.failure.clone(),
    })
}

fn push_header(out: &mut String, prefix: &str, n: usize) {
    for i in 0..n {
        let _ = write!(out, ",{prefix}{i}");
    }
}

fn push_values(out: &mut String, v: &Vector) {
    for x in v.iter() {
        let _ = write!(out, ",{x:e}");
    }
}

/// Per-sample CSV with columns `t, x…, y…, z…, u…, zstar…, e_norm, W, V, d`.
pub fn trace_csv(trace: &ClosedLoopTrace) -> String {
    let mut out = String::from("t");
    if let Some(s) = trace.samples.first() {
        push_header(&mut out, "x", s.x.len());
        push_header(&mut out, "y", s.y.len());
        push_header(&mut out, "z", s.z.len());
        push_header(&mut out, "u", s.u.len());
        push_header(&mut out, "zstar", s.z_star.len());
    }
    out.push_str(",e_norm,W,V,d\n");
    for s in &trace.samples {
        let _ = write!(out, "{:e}", s.t);
        push_values(&mut out, &s.x);
        push_values(&mut out, &s.y);
        push_values(&mut out, &s.z);
        push_values(&mut out, &s.u);
        push_values(&mut out, &s.z_star);
        let v = s.lyapunov.unwrap_or(f64::NAN);
        let _ = writeln!(out, ",{:e},{:e},{:e},{:e}", s.e_norm, s.merit, v, s.d_rate);
    }
    out
}

/// Substep CSV with columns `t, x…, y…, u…`.
pub fn dense_csv(trace: &ClosedLoopTrace) -> String {
    let mut out = String::from("t");
    if let Some(d) = trace.dense.first() {
        push_header(&mut out, "x", d.x.len());
        push_header(&mut out, "y", d.y.len());
        push_header(&mut out, "u", d.u.len());
    }
    out.push('\n');
    for d in &trace.dense {
        let _ = write!(out, "{:e}", d.t);
        push_values(&mut out, &d.x);
        push_values(&mut out, &d.y);
        push_values(&mut out, &d.u);
        out.push('\n');
    }
    out
}

/// Checks that every state and output in the trace is finite.
pub fn trace_is_finite(trace: &ClosedLoopTrace) -> bool {
    trace.samples.iter().all(|s| all_finite(&s.x) && all_finite(&s.z))
}
